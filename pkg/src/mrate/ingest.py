"""Loading, splitting and summarising user-item interaction logs.

Users and items live in separate namespaces. Internally every node gets a
global integer id: users occupy ``[0, n_users)`` and items
``[n_users, n_users + n_items)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from .config import SplitSpec

HEADER_NAMES = {("user_id", "item_id", "timestamp"), ("user", "item", "timestamp")}


class ParseError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


class EmptyNetworkError(ValueError):
    pass


class Interaction(NamedTuple):
    user: int
    item: int
    timestamp: float
    seq_index: int


@dataclass
class TemporalInteractionNetwork:
    interactions: list[Interaction]
    user_ids: list[str]
    item_ids: list[str]
    user_index: dict[str, int] = field(default_factory=dict)
    item_index: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.user_index:
            self.user_index = {u: i for i, u in enumerate(self.user_ids)}
        if not self.item_index:
            self.item_index = {v: i for i, v in enumerate(self.item_ids)}

    def __len__(self) -> int:
        return len(self.interactions)

    def __iter__(self):
        return iter(self.interactions)

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items

    def user_node(self, s: Interaction) -> int:
        return s.user

    def item_node(self, s: Interaction) -> int:
        return self.n_users + s.item

    def node_name(self, node: int) -> str:
        if node < self.n_users:
            return self.user_ids[node]
        return self.item_ids[node - self.n_users]

    def is_item(self, node: int) -> bool:
        return node >= self.n_users

    def with_interactions(self, interactions: list[Interaction]) -> "TemporalInteractionNetwork":
        """A view over ``interactions`` sharing this network's id universes."""
        return TemporalInteractionNetwork(list(interactions), self.user_ids, self.item_ids,
                                          self.user_index, self.item_index)


def from_records(records: Iterable[tuple[str, str, float]]) -> TemporalInteractionNetwork:
    """Build a network from (user, item, timestamp) triples in file order."""
    raw = list(records)
    if not raw:
        raise EmptyNetworkError("no interactions")
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    # sorted() is stable, so equal timestamps keep their record order
    order = sorted(range(len(raw)), key=lambda i: raw[i][2])
    interactions = []
    for seq, i in enumerate(order, start=1):
        u, v, t = raw[i]
        ui = user_index.setdefault(u, len(user_index))
        vi = item_index.setdefault(v, len(item_index))
        interactions.append(Interaction(ui, vi, float(t), seq))
    return TemporalInteractionNetwork(interactions, list(user_index), list(item_index),
                                      user_index, item_index)


def load_interactions(path: str | Path) -> TemporalInteractionNetwork:
    path = Path(path)
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if lineno == 1 and tuple(c.strip().lower() for c in row) in HEADER_NAMES:
                continue
            if len(row) != 3:
                raise ParseError(path, lineno, f"expected 3 fields (user,item,timestamp), got {len(row)}")
            user, item, ts = (c.strip() for c in row)
            if not user or not item:
                raise ParseError(path, lineno, "empty user or item id")
            try:
                t = float(ts)
            except ValueError:
                raise ParseError(path, lineno, f"timestamp {ts!r} is not a number") from None
            if not math.isfinite(t) or t < 0:
                raise ParseError(path, lineno, f"timestamp {ts!r} must be finite and non-negative")
            records.append((user, item, t))
    if not records:
        raise EmptyNetworkError(f"{path}: no interactions")
    return from_records(records)


def dump_interactions(network: TemporalInteractionNetwork, path: str | Path, header: bool = True) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if header:
            writer.writerow(["user_id", "item_id", "timestamp"])
        for s in network.interactions:
            writer.writerow([network.user_ids[s.user], network.item_ids[s.item], repr(s.timestamp)])


def temporal_split(network: TemporalInteractionNetwork, spec: SplitSpec | None = None):
    """Split by interaction count: floor(train*N), floor(valid*N), remainder."""
    spec = spec or SplitSpec()
    n = len(network)
    if n == 0:
        raise EmptyNetworkError("cannot split an empty network")
    n_train = math.floor(spec.train_fraction * n)
    n_valid = math.floor(spec.valid_fraction * n)
    s = network.interactions
    return (network.with_interactions(s[:n_train]),
            network.with_interactions(s[n_train:n_train + n_valid]),
            network.with_interactions(s[n_train + n_valid:]))


@dataclass
class DatasetStats:
    mean_inter_event_gap: float
    user_count: int
    item_count: int
    interaction_count: int


GAP_SENTINEL = 1.0


def inter_event_gaps(interactions: Sequence[Interaction], n_users: int) -> list[float]:
    last: dict[int, float] = {}
    gaps = []
    for s in interactions:
        for node in (s.user, n_users + s.item):
            if node in last:
                gaps.append(s.timestamp - last[node])
            last[node] = s.timestamp
    return gaps


def compute_stats(train: TemporalInteractionNetwork) -> DatasetStats:
    gaps = inter_event_gaps(train.interactions, train.n_users)
    mean_gap = math.fsum(gaps) / len(gaps) if gaps else 0.0
    if not mean_gap > 0:
        mean_gap = GAP_SENTINEL
    users = {s.user for s in train.interactions}
    items = {s.item for s in train.interactions}
    return DatasetStats(mean_gap, len(users), len(items), len(train))
