"""Finite-difference verification of the analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregator import NeighborGroup
from .config import HyperParams
from .model import InteractionInputs, forward
from .params import init_params


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class GradCheckInstance:
    params: dict
    inputs: InteractionInputs
    hyper: HyperParams


def _random_group(rng, d, m):
    emb = rng.uniform(0.05, 0.95, size=(m, d))
    feats = np.column_stack([rng.exponential(1.0, m), rng.uniform(0.0, 2.0, m)])
    return NeighborGroup(emb, feats, tuple(range(m)))


def random_instance(rng: np.random.Generator, d: int | None = None, K: int | None = None,
                    max_neighbors: int = 3, n_neighbors: int | None = None, **hyper_overrides) -> GradCheckInstance:
    d = d if d is not None else int(rng.integers(2, 9))
    K = K if K is not None else int(rng.integers(1, 4))
    d_attn = int(rng.integers(1, d + 1))
    defaults = dict(d=d, K=K, d_qkv=d_attn, lambda_u=float(rng.choice([0.0, 0.5, 1.0])),
                    lambda_i=float(rng.choice([0.0, 0.5, 1.0])),
                    intra_activation=str(rng.choice(["softmax", "elu"])))
    defaults.update(hyper_overrides)
    hyper = HyperParams(**defaults)
    params = init_params(hyper.d, hyper.K, hyper.d_attn, rng)
    # push weights away from the tiny-init regime so every path carries signal
    for k in params:
        params[k] = params[k] * 2.0 + (rng.normal(0, 0.3, params[k].shape) if params[k].ndim else rng.normal(0, 0.3))
    params["b_feat"] = np.asarray(params["b_feat"], dtype=float)

    def groups():
        counts = [n_neighbors if n_neighbors is not None else int(rng.integers(0, max_neighbors + 1))
                  for _ in range(3)]
        return tuple(_random_group(rng, hyper.d, m) for m in counts)

    u_cold, v_cold = rng.random(2) < 0.3
    inputs = InteractionInputs(
        user=0, item=1,
        u_state=None if u_cold else rng.uniform(0.05, 0.95, hyper.d),
        v_state=None if v_cold else rng.uniform(0.05, 0.95, hyper.d),
        dt_user=0.0 if u_cold else float(rng.exponential(1.0)),
        dt_item=0.0 if v_cold else float(rng.exponential(1.0)),
        user_groups=groups(), item_groups=groups(),
    )
    return GradCheckInstance(params, inputs, hyper)


def _cast_group(g, dtype):
    return NeighborGroup(g.embeddings.astype(dtype), g.features.astype(dtype), g.neighbors)


def _cast_inputs(inp: InteractionInputs, dtype) -> InteractionInputs:
    cast = lambda x: None if x is None else np.asarray(x).astype(dtype)
    return InteractionInputs(inp.user, inp.item, cast(inp.u_state), cast(inp.v_state),
                             dtype(inp.dt_user), dtype(inp.dt_item),
                             tuple(_cast_group(g, dtype) for g in inp.user_groups),
                             tuple(_cast_group(g, dtype) for g in inp.item_groups))


def finite_difference(instance: GradCheckInstance, step: float = 1e-5,
                      dtype=np.longdouble) -> dict[str, np.ndarray]:
    """Central differences of the loss, one scalar parameter at a time.

    The double-precision instance is evaluated in ``dtype`` arithmetic;
    extended precision keeps roundoff (~eps * loss / step) well below the
    smallest gradients the attention paths produce.
    """
    params = {k: np.array(v, copy=True).astype(dtype) for k, v in instance.params.items()}
    inputs = _cast_inputs(instance.inputs, dtype)
    out = {}
    for name, value in params.items():
        grad = np.zeros_like(value)
        flat = value.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            lp = forward(params, inputs, instance.hyper).loss
            flat[i] = orig - step
            lm = forward(params, inputs, instance.hyper).loss
            flat[i] = orig
            gflat[i] = (lp - lm) / (2 * step)
        out[name] = grad.astype(float)
    return out


def relative_errors(analytic: dict, numeric: dict, floor: float = 1e-8) -> dict[str, float]:
    """Per-parameter max-norm relative error; 0 where both sides vanish."""
    errs = {}
    for name in analytic:
        a, f = analytic[name], numeric[name]
        diff = np.max(np.abs(a - f)) if a.size else 0.0
        if diff == 0.0:
            errs[name] = 0.0
            continue
        scale = max(np.max(np.abs(a)), np.max(np.abs(f)), floor)
        errs[name] = float(diff / scale)
    return errs


def backward_and_check(instance: GradCheckInstance, step: float = 1e-5, fd_dtype=np.longdouble) -> float:
    res = forward(instance.params, instance.inputs, instance.hyper, need_grad=True)
    for name, g in res.grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for {name}")
    errs = relative_errors(res.grads, finite_difference(instance, step, fd_dtype))
    return max(errs.values())
