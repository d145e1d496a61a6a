"""Trainable parameters: a name -> array mapping backed by one flat buffer."""

from __future__ import annotations

import numpy as np

N_RELATIONS = 3

# name -> group, for reporting
PARAM_GROUPS = {
    "W_in": "aggregator", "W_intra": "aggregator", "W_feat": "aggregator", "b_feat": "aggregator",
    "W_Q": "aggregator", "W_K": "aggregator", "W_V": "aggregator", "W_out": "aggregator",
    "b_out": "aggregator",
    "W_user": "dynamics", "W_item": "dynamics", "W_t": "dynamics", "b_t": "dynamics",
    "P_W1": "head", "P_W2": "head", "P_b": "head",
    "init_user": "initial", "init_item": "initial",
}


def param_shapes(d: int, K: int, d_attn: int) -> dict[str, tuple[int, ...]]:
    return {
        "W_in": (K, d, d),
        "W_intra": (N_RELATIONS, K, 2 * d),
        "W_feat": (2,),
        "b_feat": (),
        "W_Q": (d, d_attn),
        "W_K": (d, d_attn),
        "W_V": (d, d_attn),
        "W_out": (d, N_RELATIONS * d_attn),
        "b_out": (d,),
        # stacked W_1..W_4 of each recurrent cell
        "W_user": (4, d, d),
        "W_item": (4, d, d),
        "W_t": (d,),
        "b_t": (d,),
        "P_W1": (d, d),
        "P_W2": (d, d),
        "P_b": (d,),
        "init_user": (d,),
        "init_item": (d,),
    }


class ParamSet(dict):
    """Dict of named arrays that are views into ``flat``.

    Whole-set arithmetic (optimiser steps, gradient sums) runs on ``flat``;
    per-name code sees ordinary arrays. Rebinding a key breaks the link, so
    update arrays in place.
    """

    def __init__(self, shapes: dict[str, tuple[int, ...]], flat: np.ndarray | None = None):
        total = sum(int(np.prod(s)) for s in shapes.values())
        if flat is None:
            flat = np.zeros(total)
        elif flat.shape != (total,):
            raise ValueError(f"flat buffer has shape {flat.shape}, expected ({total},)")
        super().__init__()
        self.flat = flat
        pos = 0
        for name, shape in shapes.items():
            n = int(np.prod(shape))
            super().__setitem__(name, flat[pos:pos + n].reshape(shape))
            pos += n

    @property
    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self.items()}

    def linked(self) -> bool:
        return all(np.shares_memory(v, self.flat) for v in self.values())

    def __setitem__(self, key, value):
        # keep the view: copy into it
        self[key][...] = value

    @classmethod
    def from_dict(cls, arrays: dict[str, np.ndarray]) -> "ParamSet":
        out = cls({k: np.shape(v) for k, v in arrays.items()})
        for k, v in arrays.items():
            out[k][...] = v
        return out


def init_params(d: int, K: int, d_attn: int, rng: np.random.Generator) -> ParamSet:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    shapes = param_shapes(d, K, d_attn)
    fan_in = {
        "W_in": d, "W_intra": 2 * d, "W_feat": 2, "W_Q": d, "W_K": d, "W_V": d,
        "W_out": N_RELATIONS * d_attn, "W_user": d, "W_item": d, "W_t": 1,
        "P_W1": d, "P_W2": d, "init_user": d, "init_item": d,
    }
    params = ParamSet(shapes)
    for name, shape in shapes.items():
        if name in fan_in:
            bound = 1.0 / np.sqrt(fan_in[name])
            params[name][...] = rng.uniform(-bound, bound, size=shape)
    return params


def params_for(hyper, rng: np.random.Generator) -> ParamSet:
    return init_params(hyper.d, hyper.K, hyper.d_attn, rng)


def zeros_like(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    if isinstance(params, ParamSet):
        return ParamSet(params.shapes, np.zeros_like(params.flat))
    return {k: np.zeros_like(v) for k, v in params.items()}


def copy_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    if isinstance(params, ParamSet):
        return ParamSet(params.shapes, params.flat.copy())
    return {k: v.copy() for k, v in params.items()}
