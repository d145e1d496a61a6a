"""Paragraph-vector (PV-DBOW) embeddings of node interaction sequences.

Each node's time-ordered list of partners is a sentence; the node itself is
the document. A document vector is trained with negative sampling to predict
the words of its sentence through a table of output word vectors. User
sentences contain items and item sentences contain users, so negatives are
drawn from the same kind as the sentence's words.

A sentence is walked in consecutive windows of ``window`` words. Each
window is one vectorised step: its words and their negatives are all scored
against the document vector as read at the start of the step. Incremental
training re-walks only the sentences touched by new interactions.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

FORMAT_MAGIC = b"MRSEQ"
FORMAT_VERSION = 1


class DegenerateVectorError(ValueError):
    pass


class EmptyCorpusError(ValueError):
    pass


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _scatter_add(table: np.ndarray, rows: np.ndarray, values: np.ndarray) -> None:
    """table[rows] += values, accumulating repeated rows."""
    order = np.argsort(rows, kind="stable")
    rows = rows[order]
    starts = np.flatnonzero(np.r_[True, rows[1:] != rows[:-1]])
    table[rows[starts]] += np.add.reduceat(values[order], starts, axis=0)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of two unit vectors."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.clip(a @ b, -1.0, 1.0))


def build_corpus(interactions: Iterable, n_users: int) -> dict[int, list[int]]:
    """Node -> time-ordered partner list."""
    corpus: dict[int, list[int]] = {}
    for s in interactions:
        u, v = s.user, n_users + s.item
        corpus.setdefault(u, []).append(v)
        corpus.setdefault(v, []).append(u)
    return corpus


@dataclass
class SeqEmbedConfig:
    dim: int = 100
    window: int = 5
    negative: int = 5
    lr: float = 0.025
    min_lr: float = 0.0001
    epochs: int = 20
    incremental_epochs: int = 5

    @classmethod
    def from_hyper(cls, hyper) -> "SeqEmbedConfig":
        return cls(dim=hyper.d_seq, window=hyper.doc_window, negative=hyper.doc_negative,
                   lr=hyper.doc_lr, min_lr=hyper.doc_min_lr, epochs=hyper.doc_epochs,
                   incremental_epochs=hyper.doc_incremental_epochs)


class SequenceEmbeddingModel:
    def __init__(self, n_nodes: int, n_users: int, config: SeqEmbedConfig | None = None, seed: int = 0):
        self.config = config or SeqEmbedConfig()
        self.n_nodes = n_nodes
        self.n_users = n_users
        dim = self.config.dim
        self.doc = np.zeros((n_nodes, dim))
        self.word_out = np.zeros((n_nodes, dim))
        self.known = np.zeros(n_nodes, dtype=bool)
        self.word_count = np.zeros(n_nodes, dtype=np.int64)
        self.sentences: dict[int, list[int]] = {}
        self.update_counter = 0
        self.rng = np.random.default_rng(seed)

    # -- reading -------------------------------------------------------

    def knows(self, node: int) -> bool:
        return 0 <= node < self.n_nodes and bool(self.known[node])

    def embedding_of(self, node: int) -> np.ndarray | None:
        if not self.knows(node):
            return None
        v = self.doc[node]
        norm = np.linalg.norm(v)
        if not norm > 0:
            raise DegenerateVectorError(f"node {node} has a zero sequence vector")
        return v / norm

    def unit_matrix(self, nodes: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        """Rows normalised to unit length, plus a mask of non-degenerate rows."""
        m = self.doc[np.asarray(nodes, dtype=np.int64)]
        norms = np.linalg.norm(m, axis=1)
        ok = norms > 0
        out = np.zeros_like(m)
        out[ok] = m[ok] / norms[ok, None]
        return out, ok

    # -- training ------------------------------------------------------

    def _add_node(self, node: int) -> None:
        if self.known[node]:
            return
        dim = self.config.dim
        self.known[node] = True
        self.doc[node] = (self.rng.random(dim) - 0.5) / dim
        self.sentences.setdefault(node, [])

    def _negative_tables(self):
        tables = []
        for lo, hi in ((0, self.n_users), (self.n_users, self.n_nodes)):
            weights = self.word_count[lo:hi].astype(float) ** 0.75
            total = weights.sum()
            if total > 0:
                tables.append((lo, np.cumsum(weights) / total))
            else:
                tables.append(None)
        return tables

    def _draw_negatives(self, table, size: int) -> np.ndarray:
        lo, cdf = table
        idx = np.searchsorted(cdf, self.rng.random(size), side="right")
        return lo + np.minimum(idx, len(cdf) - 1)

    def _train_window(self, node: int, words: np.ndarray, lr: float, table) -> None:
        neg = self.config.negative
        targets = np.concatenate([words, self._draw_negatives(table, words.size * neg)])
        labels = np.zeros(targets.size)
        labels[:words.size] = 1.0
        x = self.doc[node]
        y = self.word_out[targets]
        g = (labels - _sigmoid(y @ x)) * lr
        self.doc[node] = x + g @ y
        _scatter_add(self.word_out, targets, g[:, None] * x[None, :])

    def _train_sentence(self, node: int, words: np.ndarray, lr: float, tables) -> None:
        if words.size == 0:
            return
        table = tables[0 if words[0] < self.n_users else 1]
        w = self.config.window
        for start in range(0, words.size, w):
            self._train_window(node, words[start:start + w], lr, table)

    def _run(self, work: list[tuple[int, np.ndarray]], epochs: int) -> None:
        if not work or epochs == 0:
            return
        tables = self._negative_tables()
        cfg = self.config
        for ep in range(epochs):
            lr = cfg.lr - (cfg.lr - cfg.min_lr) * ep / (epochs - 1) if epochs > 1 else cfg.lr
            for node, words in work:
                self._train_sentence(node, words, lr, tables)
        self.update_counter += 1

    def fit(self, corpus: Mapping[int, Sequence[int]]) -> "SequenceEmbeddingModel":
        if not corpus:
            raise EmptyCorpusError("cannot fit on an empty corpus")
        for node in sorted(corpus):
            self._add_node(node)
            for w in corpus[node]:
                self._add_node(int(w))
            self.sentences[node] = [int(w) for w in corpus[node]]
            np.add.at(self.word_count, np.asarray(self.sentences[node], dtype=np.int64), 1)
        work = [(n, np.asarray(self.sentences[n], dtype=np.int64)) for n in sorted(corpus)]
        self._run(work, self.config.epochs)
        return self

    def incremental_update(self, interactions: Sequence) -> "SequenceEmbeddingModel":
        """Extend sentences with new interactions and retrain only those touched."""
        if len(interactions) == 0:
            return self
        touched: list[int] = []
        for s in interactions:
            u, v = s.user, self.n_users + s.item
            for node, word in ((u, v), (v, u)):
                self._add_node(node)
                self._add_node(word)
                self.sentences[node].append(word)
                self.word_count[word] += 1
                if node not in touched:
                    touched.append(node)
        work = [(n, np.asarray(self.sentences[n], dtype=np.int64)) for n in touched]
        self._run(work, self.config.incremental_epochs)
        return self

    # -- persistence ---------------------------------------------------

    def to_arrays(self) -> dict[str, np.ndarray]:
        nodes = sorted(self.sentences)
        lengths = np.array([len(self.sentences[n]) for n in nodes], dtype=np.int64)
        flat = np.array([w for n in nodes for w in self.sentences[n]], dtype=np.int64)
        meta = {"version": FORMAT_VERSION, "n_nodes": self.n_nodes, "n_users": self.n_users,
                "config": vars(self.config), "update_counter": self.update_counter,
                "rng": self.rng.bit_generator.state}
        return {"seq_meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
                "seq_doc": self.doc, "seq_word_out": self.word_out,
                "seq_known": self.known, "seq_word_count": self.word_count,
                "seq_nodes": np.asarray(nodes, dtype=np.int64), "seq_lengths": lengths, "seq_flat": flat}

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> "SequenceEmbeddingModel":
        meta = json.loads(bytes(np.asarray(arrays["seq_meta"], dtype=np.uint8)).decode())
        if meta.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported sequence model version {meta.get('version')}")
        model = cls(meta["n_nodes"], meta["n_users"], SeqEmbedConfig(**meta["config"]))
        model.doc = np.array(arrays["seq_doc"], dtype=float)
        model.word_out = np.array(arrays["seq_word_out"], dtype=float)
        model.known = np.array(arrays["seq_known"], dtype=bool)
        model.word_count = np.array(arrays["seq_word_count"], dtype=np.int64)
        model.update_counter = meta["update_counter"]
        model.rng.bit_generator.state = meta["rng"]
        flat = np.asarray(arrays["seq_flat"]).tolist()
        pos = 0
        for n, L in zip(np.asarray(arrays["seq_nodes"]).tolist(), np.asarray(arrays["seq_lengths"]).tolist()):
            model.sentences[n] = flat[pos:pos + L]
            pos += L
        return model

    def save(self, path: str | Path) -> None:
        buf = io.BytesIO()
        np.savez(buf, **self.to_arrays())
        with open(path, "wb") as fh:
            fh.write(FORMAT_MAGIC + FORMAT_VERSION.to_bytes(4, "little"))
            fh.write(buf.getvalue())

    @classmethod
    def load(cls, path: str | Path) -> "SequenceEmbeddingModel":
        with open(path, "rb") as fh:
            head = fh.read(len(FORMAT_MAGIC) + 4)
            if head[:len(FORMAT_MAGIC)] != FORMAT_MAGIC:
                raise ValueError(f"{path}: not a sequence model file")
            version = int.from_bytes(head[len(FORMAT_MAGIC):], "little")
            if version != FORMAT_VERSION:
                raise ValueError(f"{path}: unsupported version {version}")
            with np.load(io.BytesIO(fh.read())) as data:
                return cls.from_arrays(dict(data))


def fit_initial(corpus: Mapping[int, Sequence[int]], n_nodes: int, n_users: int,
                config: SeqEmbedConfig | None = None, seed: int = 0) -> SequenceEmbeddingModel:
    return SequenceEmbeddingModel(n_nodes, n_users, config, seed).fit(corpus)


def incremental_update(model: SequenceEmbeddingModel, interactions: Sequence) -> SequenceEmbeddingModel:
    return model.incremental_update(interactions)


def embedding_of(model: SequenceEmbeddingModel, node: int) -> np.ndarray | None:
    return model.embedding_of(node)
