"""Hyperparameters and run configuration."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

DAY = 86400.0


class ConfigError(ValueError):
    pass


@dataclass
class HyperParams:
    # embedding sizes
    d: int = 120
    K: int = 3
    d_qkv: int | None = None  # None -> d // K
    # relation mining
    mu: float = 0.5
    T: float = 3 * DAY
    similarity_candidates: int = 500
    use_his: bool = True
    use_com: bool = True
    use_seq: bool = True
    # aggregation
    use_attention: bool = True
    use_neighbors: bool = True
    intra_activation: str = "softmax"
    leaky_slope: float = 0.2
    # loss / optimisation
    lambda_u: float = 1.0
    lambda_i: float = 1.0
    loss_form: str = "l2"
    learning_rate: float = 0.001
    epochs: int = 50
    rnn_truncation: int = 1
    # sequence embeddings
    d_seq: int = 100
    doc_window: int = 5
    doc_negative: int = 5
    doc_lr: float = 0.025
    doc_min_lr: float = 0.0001
    doc_epochs: int = 20
    doc_incremental_epochs: int = 5
    seed: int = 0

    def __post_init__(self) -> None:
        self.validate()

    @property
    def d_attn(self) -> int:
        return self.d_qkv if self.d_qkv is not None else max(1, self.d // self.K)

    def validate(self) -> None:
        positive = ["d", "K", "T", "learning_rate", "d_seq", "doc_window",
                    "doc_negative", "doc_lr", "similarity_candidates"]
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.d_qkv is not None and self.d_qkv <= 0:
            raise ConfigError("d_qkv must be positive")
        for name in ["epochs", "doc_epochs", "doc_incremental_epochs", "lambda_u", "lambda_i",
                     "leaky_slope", "doc_min_lr"]:
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.intra_activation not in ("softmax", "elu"):
            raise ConfigError("intra_activation must be 'softmax' or 'elu'")
        if self.loss_form not in ("l2", "squared"):
            raise ConfigError("loss_form must be 'l2' or 'squared'")
        if self.rnn_truncation != 1:
            raise ConfigError("only rnn_truncation=1 (single-step truncation) is supported")

    def replace(self, **changes: Any) -> "HyperParams":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "HyperParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown hyperparameter keys: {sorted(unknown)}")
        return cls(**data)


ABLATIONS: dict[str, dict[str, bool]] = {
    "full": {},
    "wo_his": {"use_his": False},
    "wo_com": {"use_com": False},
    "wo_seq": {"use_seq": False},
    "wo_att": {"use_attention": False},
    "wo_pro": {"use_neighbors": False},
}


@dataclass
class SplitSpec:
    train_fraction: float = 0.8
    valid_fraction: float = 0.1
    test_fraction: float = 0.1

    def __post_init__(self) -> None:
        parts = (self.train_fraction, self.valid_fraction, self.test_fraction)
        if any(not 0.0 <= p <= 1.0 for p in parts):
            raise ConfigError(f"split fractions must lie in [0, 1], got {parts}")
        if abs(sum(parts) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {sum(parts)}")


@dataclass
class RunConfig:
    dataset: str = ""
    output_dir: str = "runs/default"
    split: SplitSpec = field(default_factory=SplitSpec)
    hyper: HyperParams = field(default_factory=HyperParams)
    mode: str = "train"
    workers: int = 1

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        split = data.pop("split", {})
        hyper = data.pop("hyper", {})
        if not isinstance(split, dict) or not isinstance(hyper, dict):
            raise ConfigError("'split' and 'hyper' must be JSON objects")
        split_known = {f.name for f in fields(SplitSpec)}
        if set(split) - split_known:
            raise ConfigError(f"unknown split keys: {sorted(set(split) - split_known)}")
        return cls(split=SplitSpec(**split), hyper=HyperParams.from_dict(hyper), **data)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(data)
