"""Incremental history indexes and local relation graph mining.

A local relation graph is a star around one interacting node. Its edges
carry a relation type and an attribute pair (time, weight). Three miners
produce the edges; each reads the history index as it stood *before* the
interaction being processed.
"""

from __future__ import annotations

import enum
import math
from bisect import bisect_left, bisect_right
from collections import OrderedDict, defaultdict
from dataclasses import dataclass, field
from itertools import islice
from typing import TYPE_CHECKING, Iterable

import numpy as np

if TYPE_CHECKING:
    from .seq_embed import SequenceEmbeddingModel


class RelationType(enum.IntEnum):
    HISTORICAL = 0
    COMMON = 1
    SEQUENCE = 2

    @property
    def label(self) -> str:
        return ("his", "com", "seq")[self]


RELATION_TYPES = tuple(RelationType)


class OutOfOrderError(ValueError):
    pass


@dataclass(frozen=True)
class RelationAttribute:
    time: float
    weight: float


@dataclass(frozen=True)
class RelationEdge:
    neighbor: int
    relation: RelationType
    attr: RelationAttribute


@dataclass
class LocalRelationGraph:
    center: int
    as_of: float
    edges: list[RelationEdge] = field(default_factory=list)

    def by_type(self, relation: RelationType) -> list[RelationEdge]:
        return [e for e in self.edges if e.relation == relation]

    def neighbors(self) -> set[int]:
        return {e.neighbor for e in self.edges}

    def to_json(self, name=str) -> dict:
        edges = sorted(self.edges, key=lambda e: (int(e.relation), e.neighbor))
        return {
            "center": name(self.center),
            "as_of": self.as_of,
            "edges": [{"neighbor": name(e.neighbor), "type": e.relation.label,
                       "t": e.attr.time, "w": e.attr.weight} for e in edges],
        }


class HistoryIndex:
    """Causal index over the interactions recorded so far.

    Node ids are global: users in ``[0, n_users)``, items above. With
    ``strict_order`` every record must be at or after all earlier ones;
    otherwise only each node's own events must be time-ordered, which is
    what batch-parallel replay produces.
    """

    def __init__(self, n_users: int, strict_order: bool = True):
        self.n_users = n_users
        self.strict_order = strict_order
        # node -> partner -> [count, last_time]
        self.partners: dict[int, dict[int, list]] = defaultdict(dict)
        # node -> parallel lists of event times and partners, time-ordered
        self.event_times: dict[int, list[float]] = defaultdict(list)
        self.event_partners: dict[int, list[int]] = defaultdict(list)
        self.last_time: dict[int, float] = {}
        # most recently active nodes at the end, one ordering per node kind
        self._recency = (OrderedDict(), OrderedDict())
        self.latest = -math.inf
        self.size = 0

    def is_item(self, node: int) -> bool:
        return node >= self.n_users

    def record(self, user: int, item_node: int, t: float) -> None:
        if self.strict_order and t < self.latest:
            raise OutOfOrderError(f"timestamp {t} precedes already recorded {self.latest}")
        for node in (user, item_node):
            if t < self.last_time.get(node, -math.inf):
                raise OutOfOrderError(f"timestamp {t} precedes node {node}'s last interaction")
        self.latest = max(self.latest, t)
        self.size += 1
        for a, b in ((user, item_node), (item_node, user)):
            entry = self.partners[a].get(b)
            if entry is None:
                self.partners[a][b] = [1, t]
            else:
                entry[0] += 1
                entry[1] = t
            self.event_times[a].append(t)
            self.event_partners[a].append(b)
            self.last_time[a] = t
            recency = self._recency[self.is_item(a)]
            recency[a] = t
            recency.move_to_end(a)

    def recent_nodes(self, is_item: bool, limit: int | None = None) -> list[int]:
        """Same-kind nodes with at least one interaction, most recent first."""
        it = reversed(self._recency[is_item])
        return list(it if limit is None else islice(it, limit))

    def sentence(self, node: int) -> list[int]:
        return self.event_partners.get(node, [])


def record_interaction(index: HistoryIndex, user: int, item_node: int, t: float) -> HistoryIndex:
    index.record(user, item_node, t)
    return index


def mine_historical(index: HistoryIndex, center: int, now: float | None = None) -> list[RelationEdge]:
    edges = []
    for partner, (count, last) in index.partners.get(center, {}).items():
        edges.append(RelationEdge(partner, RelationType.HISTORICAL, RelationAttribute(last, float(count))))
    return edges


def mine_common(index: HistoryIndex, center: int, now: float | None, T: float) -> list[RelationEdge]:
    """Same-kind nodes sharing a partner within a sliding window of width T.

    Weight counts co-interaction pairs; time is the latest co-interaction,
    where a pair's time is the later of its two events. Events after
    ``now`` are ignored.
    """
    counts: dict[int, int] = defaultdict(int)
    times: dict[int, float] = {}
    horizon = math.inf if now is None else now
    for t1, x in zip(index.event_times.get(center, ()), index.event_partners.get(center, ())):
        if t1 > horizon:
            break
        xt = index.event_times[x]
        xp = index.event_partners[x]
        lo = bisect_left(xt, t1 - T)
        hi = bisect_right(xt, min(t1 + T, horizon))
        for j in range(lo, hi):
            m = xp[j]
            if m == center:
                continue
            counts[m] += 1
            pair_time = max(t1, xt[j])
            if pair_time > times.get(m, -math.inf):
                times[m] = pair_time
    return [RelationEdge(m, RelationType.COMMON, RelationAttribute(times[m], float(c)))
            for m, c in counts.items()]


def mine_similarity(index: HistoryIndex, seq_model: "SequenceEmbeddingModel | None", center: int,
                    now: float | None, mu: float, max_candidates: int = 500) -> list[RelationEdge]:
    """Same-kind nodes whose sequence embeddings have cosine strictly above ``mu``.

    Candidates are the ``max_candidates`` most recently active same-kind
    nodes known to the sequence model whose last interaction is not after
    ``now``.
    """
    if seq_model is None or center not in index.last_time:
        return []
    s_center = seq_model.embedding_of(center)
    if s_center is None:
        return []
    pool = []
    for n in reversed(index._recency[index.is_item(center)]):
        if len(pool) >= max_candidates:
            break
        if n != center and seq_model.knows(n) and (now is None or index.last_time[n] <= now):
            pool.append(n)
    if not pool:
        return []
    unit, ok = seq_model.unit_matrix(pool)
    sims = unit @ s_center
    t_center = index.last_time[center]
    edges = []
    for n, cos, good in zip(pool, sims, ok):
        if good and cos > mu:
            t = max(t_center, index.last_time[n])
            edges.append(RelationEdge(n, RelationType.SEQUENCE, RelationAttribute(t, float(cos))))
    return edges


def build_local_graph(index: HistoryIndex, seq_model, center: int, now: float, hyper) -> LocalRelationGraph:
    edges: list[RelationEdge] = []
    if hyper.use_his:
        edges += mine_historical(index, center, now)
    if hyper.use_com:
        edges += mine_common(index, center, now, hyper.T)
    if hyper.use_seq:
        edges += mine_similarity(index, seq_model, center, now, hyper.mu, hyper.similarity_candidates)
    seen = set()
    unique = []
    for e in edges:
        key = (e.neighbor, e.relation)
        if key not in seen:
            seen.add(key)
            unique.append(e)
    return LocalRelationGraph(center, now, unique)


def related_neighbors(graph: LocalRelationGraph, center_prev_time: float | None, now: float,
                      last_time: dict[int, float]) -> set[int]:
    """Neighbors whose last interaction lies in (center_prev_time, now]."""
    lo = -math.inf if center_prev_time is None else center_prev_time
    out = set()
    for n in graph.neighbors():
        t = last_time.get(n)
        if t is not None and lo < t <= now:
            out.add(n)
    return out


def full_history_neighbors(interactions: Iterable, n_users: int, n_nodes: int, hyper,
                           seq_model=None) -> list[np.ndarray]:
    """Symmetric neighbor lists over an entire stream, for batch scheduling only.

    Includes every historical and common relation that can ever appear
    while replaying the stream, plus sequence-similarity relations under
    ``seq_model`` without any candidate cap.
    """
    index = HistoryIndex(n_users)
    for s in interactions:
        index.record(s.user, n_users + s.item, s.timestamp)
    nbrs: list[set[int]] = [set() for _ in range(n_nodes)]
    for node in list(index.last_time):
        if hyper.use_his:
            nbrs[node].update(index.partners[node])
        if hyper.use_com:
            for e in mine_common(index, node, None, hyper.T):
                nbrs[node].add(e.neighbor)
                nbrs[e.neighbor].add(node)
    if hyper.use_seq and seq_model is not None:
        for is_item in (False, True):
            nodes = [n for n in index.recent_nodes(is_item) if seq_model.knows(n)]
            if len(nodes) < 2:
                continue
            unit, ok = seq_model.unit_matrix(nodes)
            sims = unit @ unit.T
            ok_pair = np.outer(ok, ok)
            ii, jj = np.nonzero((sims > hyper.mu) & ok_pair)
            for a, b in zip(ii, jj):
                if a != b:
                    nbrs[nodes[a]].add(nodes[b])
    return [np.fromiter(sorted(s), dtype=np.int64, count=len(s)) for s in nbrs]
