"""Paired recurrent updates of user and item embeddings.

    u_aft = sigmoid(W1u u_prev + W2u v_prev + W3u h'_u + W4u enc(dt_u))
    v_aft = sigmoid(W1v v_prev + W2v u_prev + W3v h'_v + W4v enc(dt_v))

``enc`` is a linear layer shared by both cells acting on the elapsed time
scaled by the mean inter-event gap.
"""

from __future__ import annotations

import numpy as np


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class NodeStates:
    """Dynamic embeddings and last-interaction times for every node.

    Cold nodes (no interaction yet) have ``last_time`` NaN and read the
    shared initial embedding of their kind.
    """

    def __init__(self, n_users: int, n_items: int, d: int):
        self.n_users = n_users
        self.n_items = n_items
        self.emb = np.zeros((n_users + n_items, d))
        self.last_time = np.full(n_users + n_items, np.nan)

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items

    def is_cold(self, node: int) -> bool:
        return bool(np.isnan(self.last_time[node]))

    def previous(self, node: int, params) -> np.ndarray:
        if self.is_cold(node):
            return params["init_item" if node >= self.n_users else "init_user"]
        return self.emb[node]

    def item_matrix(self, params) -> np.ndarray:
        m = self.emb[self.n_users:].copy()
        cold = np.isnan(self.last_time[self.n_users:])
        m[cold] = params["init_item"]
        return m

    def copy(self) -> "NodeStates":
        out = NodeStates(self.n_users, self.n_items, self.emb.shape[1])
        out.emb = self.emb.copy()
        out.last_time = self.last_time.copy()
        return out


def encode_time_interval(delta: float, mean_gap: float, params) -> np.ndarray:
    if delta < 0:
        raise ValueError(f"negative time interval {delta}")
    return params["W_t"] * (delta / mean_gap) + params["b_t"]


def cell_forward(W, own_prev, other_prev, h_nbr, t_vec):
    """One recurrent cell; W stacks the four d x d matrices."""
    for x in (own_prev, other_prev, h_nbr, t_vec):
        if x.shape != (W.shape[1],):
            raise ValueError(f"dimension mismatch: expected ({W.shape[1]},), got {x.shape}")
    pre = W[0] @ own_prev + W[1] @ other_prev + W[2] @ h_nbr + W[3] @ t_vec
    return sigmoid(pre)


def cell_backward(dout, out, W, own_prev, other_prev, h_nbr, t_vec, dW):
    """Accumulates into dW; returns grads for (own_prev, other_prev, h_nbr, t_vec)."""
    dpre = dout * out * (1.0 - out)
    for i, x in enumerate((own_prev, other_prev, h_nbr, t_vec)):
        dW[i] += np.outer(dpre, x)
    return tuple(W[i].T @ dpre for i in range(4))


def update_user(u_prev, v_prev, h_u, delta_u, params, mean_gap: float = 1.0):
    t_vec = encode_time_interval(delta_u, mean_gap, params)
    return cell_forward(params["W_user"], u_prev, v_prev, h_u, t_vec)


def update_item(v_prev, u_prev, h_v, delta_v, params, mean_gap: float = 1.0):
    t_vec = encode_time_interval(delta_v, mean_gap, params)
    return cell_forward(params["W_item"], v_prev, u_prev, h_v, t_vec)
