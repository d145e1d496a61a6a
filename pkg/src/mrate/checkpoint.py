"""Versioned checkpoints of a training engine.

One ``.npz`` archive holds parameters, optimiser moments, dynamic node
states, the sequence model, the engine RNG and a JSON header with the
hyperparameters and dataset statistics. The relation history index is not
stored as such: it is rebuilt by re-recording the committed interactions in
their original commit order.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import HyperParams
from .dynamics import NodeStates
from .ingest import DatasetStats, Interaction
from .params import ParamSet
from .seq_embed import SequenceEmbeddingModel
from .trainer import Engine

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(engine: Engine, path: str | Path) -> None:
    header = {
        "version": CHECKPOINT_VERSION,
        "hyper": asdict(engine.hyper),
        "stats": asdict(engine.stats),
        "n_users": engine.n_users,
        "n_items": engine.n_items,
        "rng": engine.rng.bit_generator.state,
    }
    arrays = {"header": np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)}
    for k, v in engine.params.items():
        arrays[f"param/{k}"] = v
    arrays.update(engine.optimizer.state_arrays())
    arrays["state_emb"] = engine.states.emb
    arrays["state_last_time"] = engine.states.last_time
    arrays["committed"] = np.asarray(engine.committed, dtype=np.int64)
    arrays.update(engine.seq.to_arrays())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path, interactions: Sequence[Interaction]) -> Engine:
    """Restore an engine; ``interactions`` must contain every committed one."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files}
        header = json.loads(bytes(arrays["header"]).decode())
    except (OSError, ValueError, KeyError, EOFError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")
    try:
        hyper = HyperParams.from_dict(header["hyper"])
        engine = Engine(hyper, header["n_users"], header["n_items"], DatasetStats(**header["stats"]))
        names = list(engine.params)
        engine.params = ParamSet.from_dict({k: arrays[f"param/{k}"] for k in names})
        engine.optimizer.load_state_arrays({k: v for k, v in arrays.items() if k.startswith("adam_")})
        engine.rng.bit_generator.state = header["rng"]
        states = NodeStates(engine.n_users, engine.n_items, hyper.d)
        states.emb = np.array(arrays["state_emb"], dtype=float)
        states.last_time = np.array(arrays["state_last_time"], dtype=float)
        if states.emb.shape != (engine.n_nodes, hyper.d):
            raise CheckpointError(f"{path}: state shape {states.emb.shape} does not match the model")
        engine.states = states
        engine.seq = SequenceEmbeddingModel.from_arrays(arrays)
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing entry {exc}") from exc
    by_index = {s.seq_index: s for s in interactions}
    for i in arrays["committed"].tolist():
        if i not in by_index:
            raise CheckpointError(f"{path}: committed interaction {i} is not in the supplied stream")
        s = by_index[i]
        engine.index.record(s.user, engine.n_users + s.item, s.timestamp)
        engine.committed.append(i)
    return engine
