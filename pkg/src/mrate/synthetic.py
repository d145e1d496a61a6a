"""Synthetic repeat-consumption streams for desk-scale experiments."""

from __future__ import annotations

import numpy as np

from .config import DAY
from .ingest import TemporalInteractionNetwork, from_records


def repeat_stream(n_users: int = 50, interactions: int = 2000, items_per_user: int = 3,
                  group_size: int = 5, pool_size: int = 5, mean_gap: float = 0.5 * DAY,
                  seed: int = 0) -> TemporalInteractionNetwork:
    """Users cycle over a personal item set drawn from a pool shared with their group.

    Every user gets ``interactions // n_users`` events (remainder to the
    first users) separated by exponential gaps, so group-mates keep
    co-interacting with the same items within a few days.
    """
    rng = np.random.default_rng(seed)
    records = []
    per_user = [interactions // n_users + (1 if u < interactions % n_users else 0) for u in range(n_users)]
    for u in range(n_users):
        g = u // group_size
        pool = [f"i{g * pool_size + k}" for k in range(pool_size)]
        own = [pool[k] for k in rng.choice(pool_size, size=items_per_user, replace=False)]
        t = rng.exponential(mean_gap)
        phase = int(rng.integers(items_per_user))
        for k in range(per_user[u]):
            records.append((f"u{u}", own[(phase + k) % items_per_user], float(round(t, 3))))
            t += rng.exponential(mean_gap)
    return from_records(records)
