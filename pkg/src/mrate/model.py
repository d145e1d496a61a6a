"""Forward and backward pass for one interaction.

The loss for interaction (u, v, t) is

    ||v_pred - v_prev|| + lambda_u ||u_aft - u_prev|| + lambda_i ||v_aft - v_prev||

with v_pred = softmax(P_W1 u_prev + P_W2 h'_u + P_b). Gradients are
truncated after one step: previous embeddings and neighbor embeddings are
constants, except for cold nodes, whose previous embedding *is* the shared
trainable initial vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .aggregator import NeighborGroup, neighbor_backward, neighbor_forward, softmax, softmax_backward
from .dynamics import cell_backward, cell_forward
from .params import zeros_like


@dataclass
class InteractionInputs:
    """Everything one interaction needs, read from the pre-batch snapshot."""

    user: int
    item: int
    u_state: np.ndarray | None            # None -> cold, use init_user
    v_state: np.ndarray | None            # None -> cold, use init_item
    dt_user: float                        # elapsed time / mean gap
    dt_item: float
    user_groups: tuple[NeighborGroup, NeighborGroup, NeighborGroup]
    item_groups: tuple[NeighborGroup, NeighborGroup, NeighborGroup]


@dataclass
class StepResult:
    loss: float
    u_aft: np.ndarray
    v_aft: np.ndarray
    v_pred: np.ndarray
    h_user: np.ndarray
    h_item: np.ndarray
    grads: dict | None = None
    traces: dict = field(default_factory=dict)


def predict_item_embedding(u_prev, h_u, params) -> np.ndarray:
    logits = params["P_W1"] @ u_prev + params["P_W2"] @ h_u + params["P_b"]
    return softmax(logits)


def _term(diff, form):
    # numpy scalars keep extended precision when the inputs carry it
    if form == "squared":
        return diff @ diff
    return np.sqrt(diff @ diff)


def _term_grad(diff, form):
    if form == "squared":
        return 2.0 * diff
    n = np.sqrt(diff @ diff)
    return diff / n if n > 0 else np.zeros_like(diff)


def interaction_loss(v_pred, v_truth, u_aft, u_prev, v_aft, v_prev, lambda_u, lambda_i, form="l2") -> float:
    for x in (v_truth, u_aft, u_prev, v_aft, v_prev):
        if np.shape(x) != np.shape(v_pred):
            raise ValueError("dimension mismatch in interaction_loss")
    return (_term(v_pred - v_truth, form) + lambda_u * _term(u_aft - u_prev, form)
            + lambda_i * _term(v_aft - v_prev, form))[()]


def forward(params, inp: InteractionInputs, hyper, need_grad=False, want_trace=False,
            grad_out=None) -> StepResult:
    """One interaction forward, plus the truncated backward when ``need_grad``.

    Gradients accumulate into ``grad_out`` when given (it is also returned as
    ``grads``), otherwise into a fresh zero set.
    """
    u_cold = inp.u_state is None
    v_cold = inp.v_state is None
    u_prev = params["init_user"] if u_cold else inp.u_state
    v_prev = params["init_item"] if v_cold else inp.v_state

    h_u, cache_u, trace_u = neighbor_forward(u_prev, inp.user_groups, params, hyper, want_trace)
    h_v, cache_v, trace_v = neighbor_forward(v_prev, inp.item_groups, params, hyper, want_trace)

    v_pred = predict_item_embedding(u_prev, h_u, params)
    t_u = params["W_t"] * inp.dt_user + params["b_t"]
    t_v = params["W_t"] * inp.dt_item + params["b_t"]
    u_aft = cell_forward(params["W_user"], u_prev, v_prev, h_u, t_u)
    v_aft = cell_forward(params["W_item"], v_prev, u_prev, h_v, t_v)

    form = hyper.loss_form
    lu, li = hyper.lambda_u, hyper.lambda_i
    loss = interaction_loss(v_pred, v_prev, u_aft, u_prev, v_aft, v_prev, lu, li, form)
    res = StepResult(loss, u_aft, v_aft, v_pred, h_u, h_v)
    if want_trace:
        res.traces = {"user": trace_u, "item": trace_v}
    if not need_grad:
        return res

    g = zeros_like(params) if grad_out is None else grad_out
    d_pred_diff = _term_grad(v_pred - v_prev, form)
    d_u_diff = lu * _term_grad(u_aft - u_prev, form)
    d_v_diff = li * _term_grad(v_aft - v_prev, form)
    du_prev = -d_u_diff
    dv_prev = -d_pred_diff - d_v_diff

    # prediction head
    dlogits = softmax_backward(v_pred, d_pred_diff)
    g["P_W1"] += np.outer(dlogits, u_prev)
    g["P_W2"] += np.outer(dlogits, h_u)
    g["P_b"] += dlogits
    du_prev = du_prev + params["P_W1"].T @ dlogits
    dh_u = params["P_W2"].T @ dlogits

    # recurrent cells
    a, b, c, dt = cell_backward(d_u_diff, u_aft, params["W_user"], u_prev, v_prev, h_u, t_u, g["W_user"])
    du_prev, dv_prev, dh_u = du_prev + a, dv_prev + b, dh_u + c
    g["W_t"] += dt * inp.dt_user
    g["b_t"] += dt
    a, b, dh_v, dt = cell_backward(d_v_diff, v_aft, params["W_item"], v_prev, u_prev, h_v, t_v, g["W_item"])
    dv_prev, du_prev = dv_prev + a, du_prev + b
    g["W_t"] += dt * inp.dt_item
    g["b_t"] += dt

    # aggregation
    dc_u = neighbor_backward(dh_u, cache_u, params, g)
    dc_v = neighbor_backward(dh_v, cache_v, params, g)
    if u_cold:
        g["init_user"] += du_prev + (dc_u if dc_u is not None else 0.0)
    if v_cold:
        g["init_item"] += dv_prev + (dc_v if dc_v is not None else 0.0)
    res.grads = g
    return res
