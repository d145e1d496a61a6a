"""Batch scheduling, batch processing and the training loop."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .aggregator import NeighborGroup, normalise_features
from .config import HyperParams
from .dynamics import NodeStates
from .ingest import DatasetStats, Interaction, TemporalInteractionNetwork, compute_stats
from .model import InteractionInputs, StepResult, forward, interaction_loss, predict_item_embedding  # noqa: F401
from .optim import Adam
from .params import params_for, zeros_like
from .relations import (RELATION_TYPES, HistoryIndex, LocalRelationGraph, RelationType, build_local_graph,
                        full_history_neighbors, related_neighbors)
from .seq_embed import SeqEmbedConfig, SequenceEmbeddingModel, build_corpus

log = logging.getLogger(__name__)

Batch = list[Interaction]


class SchedulerViolation(RuntimeError):
    pass


# -- t-n-Batch ---------------------------------------------------------------


def tn_batch_assignments(interactions: Sequence[Interaction], neighbors: Sequence[np.ndarray],
                         n_users: int) -> np.ndarray:
    """1-based batch index of every interaction.

    Each interaction goes to ``max(last[u], last[v], max(last[N(u) | N(v)])) + 1``
    where ``last`` holds the latest batch index touching a node.
    """
    n_nodes = len(neighbors)
    last = np.zeros(n_nodes, dtype=np.int64)
    out = np.empty(len(interactions), dtype=np.int64)
    for i, s in enumerate(interactions):
        u, v = s.user, n_users + s.item
        idx = max(last[u], last[v])
        for nb in (neighbors[u], neighbors[v]):
            if nb.size:
                idx = max(idx, int(last[nb].max()))
        idx += 1
        out[i] = idx
        last[u] = idx
        last[v] = idx
    return out


def tn_batch(interactions: Sequence[Interaction], neighbors: Sequence[np.ndarray], n_users: int) -> list[Batch]:
    idx = tn_batch_assignments(interactions, neighbors, n_users)
    n_batches = int(idx.max()) if len(idx) else 0
    batches: list[Batch] = [[] for _ in range(n_batches)]
    for s, b in zip(interactions, idx):
        batches[b - 1].append(s)
    return [b for b in batches if b]


def schedule_stats(batches: Sequence[Batch]) -> dict:
    sizes = [len(b) for b in batches]
    hist: dict[int, int] = {}
    for n in sizes:
        hist[n] = hist.get(n, 0) + 1
    return {"batch_count": len(batches), "interactions": sum(sizes),
            "max_batch_size": max(sizes, default=0),
            "mean_batch_size": (sum(sizes) / len(sizes)) if sizes else 0.0,
            "size_histogram": {str(k): hist[k] for k in sorted(hist)}}


# -- runtime state -------------------------------------------------------------


@dataclass
class BatchOutcome:
    loss: float
    grads: dict | None
    results: list[StepResult] = field(default_factory=list)
    inputs: list[InteractionInputs] = field(default_factory=list)


class Engine:
    """Parameters plus the evolving per-node state of one run."""

    def __init__(self, hyper: HyperParams, n_users: int, n_items: int, stats: DatasetStats):
        self.hyper = hyper
        self.n_users = n_users
        self.n_items = n_items
        self.stats = stats
        self.rng = np.random.default_rng(hyper.seed)
        self.params = params_for(hyper, self.rng)
        self.optimizer = Adam(lr=hyper.learning_rate)
        self.workers = 1
        self.freeze_seq = False
        self.reset_state()

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items

    def new_seq_model(self) -> SequenceEmbeddingModel:
        return SequenceEmbeddingModel(self.n_nodes, self.n_users, SeqEmbedConfig.from_hyper(self.hyper),
                                      seed=self.hyper.seed + 1)

    def reset_state(self) -> None:
        self.states = NodeStates(self.n_users, self.n_items, self.hyper.d)
        self.index = HistoryIndex(self.n_users, strict_order=False)
        self.seq = self.new_seq_model()
        # seq_index of every committed interaction, in commit order
        self.committed: list[int] = []

    def item_node(self, s: Interaction) -> int:
        return self.n_users + s.item

    # -- snapshot reads

    def local_graph(self, center: int, now: float) -> LocalRelationGraph:
        return build_local_graph(self.index, self.seq, center, now, self.hyper)

    def neighbor_groups(self, center: int, now: float):
        d = self.hyper.d
        if not self.hyper.use_neighbors:
            return tuple(NeighborGroup.empty(d) for _ in RELATION_TYPES)
        graph = self.local_graph(center, now)
        related = related_neighbors(graph, self.index.last_time.get(center), now, self.index.last_time)
        groups = []
        for r in RELATION_TYPES:
            edges = sorted((e for e in graph.edges if e.relation == r and e.neighbor in related),
                           key=lambda e: e.neighbor)
            if not edges:
                groups.append(NeighborGroup.empty(d))
                continue
            nbrs = tuple(e.neighbor for e in edges)
            groups.append(NeighborGroup(self.states.emb[list(nbrs)],
                                        normalise_features(edges, now, self.stats.mean_inter_event_gap), nbrs))
        return tuple(groups)

    def prepare(self, s: Interaction) -> InteractionInputs:
        u, v, t = s.user, self.item_node(s), s.timestamp
        gap = self.stats.mean_inter_event_gap
        u_last = self.index.last_time.get(u)
        v_last = self.index.last_time.get(v)
        return InteractionInputs(
            user=u, item=v,
            u_state=None if u_last is None else self.states.emb[u].copy(),
            v_state=None if v_last is None else self.states.emb[v].copy(),
            dt_user=0.0 if u_last is None else (t - u_last) / gap,
            dt_item=0.0 if v_last is None else (t - v_last) / gap,
            user_groups=self.neighbor_groups(u, t),
            item_groups=self.neighbor_groups(v, t),
        )

    def item_embeddings(self) -> np.ndarray:
        return self.states.item_matrix(self.params)

    # -- writes

    def commit(self, s: Interaction, res: StepResult) -> None:
        u, v = s.user, self.item_node(s)
        self.states.emb[u] = res.u_aft
        self.states.emb[v] = res.v_aft
        self.states.last_time[u] = s.timestamp
        self.states.last_time[v] = s.timestamp
        self.index.record(u, v, s.timestamp)
        self.committed.append(s.seq_index)

    def refresh_seq(self, batch: Sequence[Interaction]) -> None:
        if not self.freeze_seq:
            self.seq.incremental_update(batch)


def _check_batch(batch: Sequence[Interaction], inputs: Sequence[InteractionInputs], n_users: int) -> None:
    owner: dict[int, int] = {}
    for i, s in enumerate(batch):
        for node in (s.user, n_users + s.item):
            if node in owner:
                raise SchedulerViolation(f"node {node} interacts twice in one batch")
            owner[node] = i
    # historical and common relations over the full stream cover every causal one,
    # so a related neighbor of these kinds must never be written by a batch-mate
    for i, inp in enumerate(inputs):
        for groups in (inp.user_groups, inp.item_groups):
            for r in (RelationType.HISTORICAL, RelationType.COMMON):
                for n in groups[r].neighbors:
                    if owner.get(n, i) != i:
                        raise SchedulerViolation(f"neighbor {n} is written by another interaction in the batch")


def process_batch(engine: Engine, batch: Sequence[Interaction], mode: str = "train") -> BatchOutcome:
    """Run every interaction of a batch against the pre-batch snapshot, then commit."""
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    if not batch:
        return BatchOutcome(0.0, zeros_like(engine.params) if mode == "train" else None)
    inputs = [engine.prepare(s) for s in batch]
    _check_batch(batch, inputs, engine.n_users)
    need_grad = mode == "train"

    grads = zeros_like(engine.params) if need_grad else None
    if engine.workers > 1 and len(inputs) > 1:
        def run(inp):
            return forward(engine.params, inp, engine.hyper, need_grad=need_grad)

        with ThreadPoolExecutor(max_workers=engine.workers) as pool:
            results = list(pool.map(run, inputs))
        if need_grad:
            # fixed-order reduction keeps runs reproducible whatever the thread timing
            for res in results:
                grads.flat += res.grads.flat
    else:
        results = [forward(engine.params, inp, engine.hyper, need_grad=need_grad, grad_out=grads)
                   for inp in inputs]
    for res in results:
        res.grads = None
    loss = math.fsum(float(r.loss) for r in results)
    for s, res in zip(batch, results):
        engine.commit(s, res)
    return BatchOutcome(loss, grads, results, inputs)


# -- training ----------------------------------------------------------------------


@dataclass
class TrainReport:
    epoch_losses: list[float]
    batch_count: int


def scheduler_neighbors(engine: Engine, interactions: Sequence[Interaction]) -> list[np.ndarray]:
    """Full-stream relation neighbors used only to build the batch schedule."""
    seq = None
    if engine.hyper.use_seq and engine.hyper.use_neighbors and interactions:
        seq = engine.new_seq_model().fit(build_corpus(interactions, engine.n_users))
    if not engine.hyper.use_neighbors:
        return [np.zeros(0, dtype=np.int64) for _ in range(engine.n_nodes)]
    return full_history_neighbors(interactions, engine.n_users, engine.n_nodes, engine.hyper, seq)


def train(engine: Engine, train_split: TemporalInteractionNetwork,
          on_epoch: Callable[[int, float], None] | None = None) -> TrainReport:
    interactions = train_split.interactions
    if not interactions:
        raise ValueError("training split is empty")
    schedule = tn_batch(interactions, scheduler_neighbors(engine, interactions), engine.n_users)
    log.info("t-n-batch: %d interactions in %d batches", len(interactions), len(schedule))
    losses = []
    for ep in range(engine.hyper.epochs):
        engine.reset_state()
        total = 0.0
        for batch in schedule:
            out = process_batch(engine, batch, "train")
            engine.optimizer.step(engine.params, out.grads)
            engine.refresh_seq(batch)
            total += out.loss
        mean = total / len(interactions)
        losses.append(mean)
        log.info("epoch %d/%d mean loss %.6f", ep + 1, engine.hyper.epochs, mean)
        if on_epoch is not None:
            on_epoch(ep + 1, mean)
    if engine.hyper.epochs == 0:
        # states still need to reflect the training stream for evaluation
        replay(engine, schedule)
    return TrainReport(losses, len(schedule))


def replay(engine: Engine, batches: Sequence[Batch]) -> None:
    """Forward-only pass over batches with frozen parameters."""
    for batch in batches:
        process_batch(engine, batch, "eval")
        engine.refresh_seq(batch)


def build_engine(train_split: TemporalInteractionNetwork, hyper: HyperParams) -> Engine:
    return Engine(hyper, train_split.n_users, train_split.n_items, compute_stats(train_split))
