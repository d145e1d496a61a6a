"""Next-item ranking metrics and online evaluation."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .ingest import TemporalInteractionNetwork
from .trainer import Engine, process_batch


class EmptySplitError(ValueError):
    pass


@dataclass
class RankingResult:
    rank: int
    distance: float
    candidates: int


@dataclass
class Metrics:
    mrr: float
    recall_at_10: float
    samples: int

    def to_json(self) -> dict:
        return {"mrr": self.mrr, "recall_at_10": self.recall_at_10, "samples": self.samples}


def rank_items(v_pred: np.ndarray, item_embeddings: np.ndarray, truth: int) -> RankingResult:
    """Rank of ``truth`` by L2 distance; ties resolve in the truth's favour."""
    n = item_embeddings.shape[0]
    if not 0 <= truth < n:
        raise IndexError(f"ground-truth item {truth} is not a candidate")
    dist = np.linalg.norm(item_embeddings - v_pred[None, :], axis=1)
    target = dist[truth]
    return RankingResult(int(np.count_nonzero(dist < target)) + 1, float(target), n)


def mrr(ranks: Sequence[int]) -> float:
    if len(ranks) == 0:
        raise EmptySplitError("mrr of an empty rank list")
    return float(np.mean(1.0 / np.asarray(ranks, dtype=float)))


def recall_at_k(ranks: Sequence[int], k: int = 10) -> float:
    if len(ranks) == 0:
        raise EmptySplitError("recall of an empty rank list")
    if k < 1:
        raise ValueError("k must be >= 1")
    return float(np.mean(np.asarray(ranks) <= k))


def metrics_from_ranks(ranks: Sequence[int]) -> Metrics:
    return Metrics(mrr(ranks), recall_at_k(ranks, 10), len(ranks))


def evaluate_online(engine: Engine, split: TemporalInteractionNetwork, update: bool = True) -> Metrics:
    """Predict, rank, then learn from each interaction in time order.

    With ``update=False`` parameters stay frozen (debug mode); states and
    the history still advance.
    """
    if len(split) == 0:
        raise EmptySplitError("evaluation split is empty")
    ranks = []
    last_t = -np.inf
    for s in split.interactions:
        if s.timestamp < last_t:
            raise ValueError("evaluation stream is not time-ordered")
        last_t = s.timestamp
        items = engine.item_embeddings()
        out = process_batch(engine, [s], "train" if update else "eval")
        ranks.append(rank_items(out.results[0].v_pred, items, s.item).rank)
        if update:
            engine.optimizer.step(engine.params, out.grads)
        engine.refresh_seq([s])
    return metrics_from_ranks(ranks)


def popularity_ranks(history: TemporalInteractionNetwork, split: TemporalInteractionNetwork) -> list[int]:
    """Ranks under a global-popularity recommender updated online."""
    counts = np.zeros(split.n_items, dtype=np.int64)
    for s in history.interactions:
        counts[s.item] += 1
    ranks = []
    for s in split.interactions:
        ranks.append(int(np.count_nonzero(counts > counts[s.item])) + 1)
        counts[s.item] += 1
    return ranks


def write_metrics(metrics: Metrics, path: str | os.PathLike, run_log: str | os.PathLike | None = None,
                  **extra) -> None:
    Path(path).write_text(json.dumps(metrics.to_json(), indent=2) + "\n", encoding="utf-8")
    if run_log is not None:
        row = {**extra, **asdict(metrics)}
        new = not Path(run_log).exists()
        with open(run_log, "a", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(row), lineterminator="\n")
            if new:
                writer.writeheader()
            writer.writerow(row)
