"""Hierarchical multi-relation attention aggregation with manual gradients.

Intra-relation step (one relation type, K heads):

    x_j      = W_in[k] h_j
    p        = softmax_j(W_feat . [dt_j, w_j])        # across the group
    c_j      = LeakyReLU((a_rk . [x_center, x_j]) * p_j)
    alpha    = softmax_j(c)
    head_k   = softmax(sum_j alpha_j x_j)               # or ELU
    h_r      = mean_k head_k

Inter-relation step over the stacked rows H = [h_his; h_com; h_seq]:

    Z  = softmax(H W_Q (H W_K)^T / sqrt(d_k)) H W_V
    h' = softmax(W_out vec(Z) + b_out)                  # vec is row-major

Every ``*_forward`` returns ``(output, cache)`` and the matching
``*_backward`` consumes the cache. Gradients stop at neighbor embeddings;
the center embedding's gradient is returned for cold-start centers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import N_RELATIONS


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_backward(y: np.ndarray, dy: np.ndarray, axis: int = -1) -> np.ndarray:
    return y * (dy - np.sum(y * dy, axis=axis, keepdims=True))


def leaky_relu(x, slope):
    return np.where(x > 0, x, slope * x)


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


@dataclass
class NeighborGroup:
    """Related neighbors of one center under one relation type."""

    embeddings: np.ndarray          # (M, d)
    features: np.ndarray            # (M, 2): normalised elapsed time, normalised weight
    neighbors: tuple[int, ...] = ()

    @classmethod
    def empty(cls, d: int) -> "NeighborGroup":
        return cls(np.zeros((0, d)), np.zeros((0, 2)), ())

    def __len__(self) -> int:
        return self.embeddings.shape[0]


@dataclass
class AttentionTrace:
    groups: dict[str, dict] = field(default_factory=dict)
    inter_attention: np.ndarray | None = None
    output: np.ndarray | None = None

    def to_json(self) -> dict:
        def conv(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, dict):
                return {k: conv(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [conv(x) for x in v]
            return v
        return {"groups": conv(self.groups),
                "inter_attention": conv(self.inter_attention),
                "output": conv(self.output)}


def normalise_features(edges, now: float, mean_gap: float) -> np.ndarray:
    """[elapsed / mean_gap, log1p(count) or cosine] for each edge."""
    from .relations import RelationType

    out = np.empty((len(edges), 2))
    for j, e in enumerate(edges):
        out[j, 0] = (now - e.attr.time) / mean_gap
        w = e.attr.weight
        out[j, 1] = w if e.relation == RelationType.SEQUENCE else np.log1p(w)
    return out


def relation_feature_weight(features: np.ndarray, W_feat: np.ndarray, b_feat=0.0) -> np.ndarray:
    """Attribute weights p, normalised by softmax across the group.

    ``b_feat`` shifts every raw score equally, so it never changes p; the
    forward pass leaves it out to keep its gradient exactly zero.
    """
    features = np.asarray(features, dtype=float)
    if features.shape[0] == 0:
        raise ValueError("relation_feature_weight needs at least one neighbor")
    raw = features @ W_feat
    return softmax(raw)


# -- intra-relation -------------------------------------------------------


def intra_forward(h_center, group: NeighborGroup, W_in, a_r, W_feat, *, slope=0.2,
                  activation="softmax", use_attention=True):
    """Returns (h_r, cache). ``a_r`` has shape (K, 2d)."""
    K, d, _ = W_in.shape
    M = len(group)
    if M == 0:
        return np.zeros(d), None
    if group.embeddings.shape[1] != d or h_center.shape != (d,):
        raise ValueError("dimension mismatch in intra-relation aggregation")
    Hn = group.embeddings
    X = group.features
    p = softmax(X @ W_feat)
    xc = W_in @ h_center                                  # (K, d)
    xn = Hn @ W_in.transpose(0, 2, 1)                     # (K, M, d)
    s = (a_r[:, :d] * xc).sum(axis=1)[:, None] + (xn @ a_r[:, d:, None])[:, :, 0]
    z = s * p[None, :]
    c = leaky_relu(z, slope)
    if use_attention:
        alpha = softmax(c, axis=1)
    else:
        alpha = np.full((K, M), 1.0 / M)
    g = (alpha[:, None, :] @ xn)[:, 0, :]
    heads = softmax(g, axis=1) if activation == "softmax" else elu(g)
    out = heads.mean(axis=0)
    cache = dict(Hn=Hn, X=X, p=p, xc=xc, xn=xn, s=s, z=z, c=c, alpha=alpha, g=g, heads=heads,
                 h_center=h_center, slope=slope, activation=activation, use_attention=use_attention)
    return out, cache


def intra_backward(dout, cache, W_in, a_r, grads, r: int):
    """Accumulates into grads['W_in'], grads['W_intra'][r], grads['W_feat'].

    Returns the gradient with respect to the center embedding.
    """
    K, d, _ = W_in.shape
    heads, g, alpha, xn, xc = cache["heads"], cache["g"], cache["alpha"], cache["xn"], cache["xc"]
    dheads = np.broadcast_to(dout / K, heads.shape)
    if cache["activation"] == "softmax":
        dg = softmax_backward(heads, dheads, axis=1)
    else:
        dg = dheads * np.where(g > 0, 1.0, np.exp(np.minimum(g, 0.0)))
    dalpha = (xn @ dg[:, :, None])[:, :, 0]
    dxn = alpha[:, :, None] * dg[:, None, :]
    dxc = np.zeros_like(xc)
    if cache["use_attention"]:
        p, s, z = cache["p"], cache["s"], cache["z"]
        dc = softmax_backward(alpha, dalpha, axis=1)
        dz = dc * np.where(z > 0, 1.0, cache["slope"])
        ds = dz * p[None, :]
        dp = np.sum(dz * s, axis=0)
        ds_sum = ds.sum(axis=1)                                   # (K,)
        grads["W_intra"][r, :, :d] += ds_sum[:, None] * xc
        grads["W_intra"][r, :, d:] += (ds[:, None, :] @ xn)[:, 0, :]
        dxc += ds_sum[:, None] * a_r[:, :d]
        dxn += ds[:, :, None] * a_r[:, None, d:]
        draw = softmax_backward(p, dp)
        grads["W_feat"] += cache["X"].T @ draw
    grads["W_in"] += dxc[:, :, None] * cache["h_center"][None, None, :] + dxn.transpose(0, 2, 1) @ cache["Hn"]
    return (dxc[:, None, :] @ W_in)[:, 0, :].sum(axis=0)


# -- inter-relation -------------------------------------------------------


def inter_forward(H, params, use_attention=True):
    W_Q, W_K, W_V = params["W_Q"], params["W_K"], params["W_V"]
    d = H.shape[1]
    if H.shape != (N_RELATIONS, W_Q.shape[0]):
        raise ValueError(f"H must be {N_RELATIONS}x{W_Q.shape[0]}, got {H.shape}")
    dk = W_K.shape[1]
    Q = H @ W_Q
    Kx = H @ W_K
    V = H @ W_V
    if use_attention:
        A = softmax(Q @ Kx.T / np.sqrt(dk), axis=1)
    else:
        A = np.full((N_RELATIONS, N_RELATIONS), 1.0 / N_RELATIONS)
    Z = A @ V
    y = params["W_out"] @ Z.reshape(-1) + params["b_out"]
    out = softmax(y)
    cache = dict(H=H, Q=Q, Kx=Kx, V=V, A=A, Z=Z, out=out, dk=dk, use_attention=use_attention, d=d)
    return out, cache


def inter_backward(dout, cache, params, grads):
    """Accumulates parameter gradients; returns dH (3, d)."""
    H, Q, Kx, V, A, Z = (cache[k] for k in ("H", "Q", "Kx", "V", "A", "Z"))
    dy = softmax_backward(cache["out"], dout)
    grads["W_out"] += np.outer(dy, Z.reshape(-1))
    grads["b_out"] += dy
    dZ = (params["W_out"].T @ dy).reshape(Z.shape)
    dV = A.T @ dZ
    dH = dV @ params["W_V"].T
    grads["W_V"] += H.T @ dV
    if cache["use_attention"]:
        dA = dZ @ V.T
        dS = softmax_backward(A, dA, axis=1) / np.sqrt(cache["dk"])
        dQ = dS @ Kx
        dK = dS.T @ Q
        grads["W_Q"] += H.T @ dQ
        grads["W_K"] += H.T @ dK
        dH = dH + dQ @ params["W_Q"].T + dK @ params["W_K"].T
    return dH


# -- composite --------------------------------------------------------------


def neighbor_forward(h_center, groups, params, hyper, want_trace=False):
    """h' for one center from its three relation groups (his, com, seq).

    Returns (h', cache, trace). With no related neighbor in any group, or
    with neighbor propagation disabled, h' is the zero vector and cache is
    None.
    """
    d = h_center.shape[0]
    trace = AttentionTrace() if want_trace else None
    if not hyper.use_neighbors or all(len(g) == 0 for g in groups):
        if trace is not None:
            trace.output = np.zeros(d)
        return np.zeros(d), None, trace
    rows = []
    intra_caches = []
    for r, group in enumerate(groups):
        h_r, cache = intra_forward(h_center, group, params["W_in"], params["W_intra"][r], params["W_feat"],
                                   slope=hyper.leaky_slope, activation=hyper.intra_activation,
                                   use_attention=hyper.use_attention)
        rows.append(h_r)
        intra_caches.append(cache)
        if trace is not None and cache is not None:
            trace.groups[("his", "com", "seq")[r]] = {
                "neighbors": list(group.neighbors),
                "p": cache["p"], "scores": cache["c"], "alpha": cache["alpha"],
                "head_outputs": cache["heads"], "embedding": h_r,
            }
    H = np.stack(rows)
    out, inter_cache = inter_forward(H, params, use_attention=hyper.use_attention)
    if trace is not None:
        trace.inter_attention = inter_cache["A"]
        trace.output = out
    return out, {"intra": intra_caches, "inter": inter_cache}, trace


def neighbor_backward(dout, cache, params, grads):
    """Returns the gradient with respect to the center embedding."""
    if cache is None:
        return None
    dH = inter_backward(dout, cache["inter"], params, grads)
    dcenter = np.zeros(dH.shape[1])
    for r, c in enumerate(cache["intra"]):
        if c is not None:
            dcenter += intra_backward(dH[r], c, params["W_in"], params["W_intra"][r], grads, r)
    return dcenter


# -- public, spec-shaped helpers ----------------------------------------------


def intra_relation_aggregate(center_emb, neighbor_embs, features, relation: int, params, hyper):
    group = NeighborGroup(np.asarray(neighbor_embs, dtype=float).reshape(-1, len(center_emb)),
                          np.asarray(features, dtype=float).reshape(-1, 2))
    out, cache = intra_forward(np.asarray(center_emb, dtype=float), group, params["W_in"],
                               params["W_intra"][relation], params["W_feat"], slope=hyper.leaky_slope,
                               activation=hyper.intra_activation, use_attention=hyper.use_attention)
    return out, cache


def inter_relation_aggregate(rels, params, hyper=None):
    use_attention = True if hyper is None else hyper.use_attention
    return inter_forward(np.asarray(rels, dtype=float), params, use_attention=use_attention)
