import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mrate.aggregator import (NeighborGroup, inter_relation_aggregate, intra_relation_aggregate, neighbor_forward,
                              normalise_features, relation_feature_weight, softmax)
from mrate.config import HyperParams
from mrate.params import init_params
from mrate.relations import RelationAttribute, RelationEdge, RelationType

from oracles import softmax_loop


def leaky(x, slope=0.2):
    return x if x > 0 else slope * x


def intra_oracle(center, nbrs, feats, W_in, a, W_feat, slope=0.2, activation="softmax"):
    """Loop-by-loop evaluation of one intra-relation aggregation."""
    K, d = len(W_in), len(center)
    M = len(nbrs)
    if M == 0:
        return [0.0] * d
    raw = [sum(W_feat[i] * feats[j][i] for i in range(2)) for j in range(M)]
    p = softmax_loop(raw)
    heads = []
    for k in range(K):
        xc = [sum(W_in[k][i][l] * center[l] for l in range(d)) for i in range(d)]
        xs = [[sum(W_in[k][i][l] * nbrs[j][l] for l in range(d)) for i in range(d)] for j in range(M)]
        c = []
        for j in range(M):
            s = sum(a[k][i] * xc[i] for i in range(d)) + sum(a[k][d + i] * xs[j][i] for i in range(d))
            c.append(leaky(s * p[j], slope))
        alpha = softmax_loop(c)
        g = [sum(alpha[j] * xs[j][i] for j in range(M)) for i in range(d)]
        if activation == "softmax":
            heads.append(softmax_loop(g))
        else:
            heads.append([v if v > 0 else math.expm1(v) for v in g])
    return [sum(h[i] for h in heads) / K for i in range(d)]


def inter_oracle(H, WQ, WK, WV, Wout, bout):
    R, d = len(H), len(H[0])
    dq = len(WQ[0])

    def proj(W):
        return [[sum(H[r][l] * W[l][c] for l in range(d)) for c in range(len(W[0]))] for r in range(R)]

    Q, K, V = proj(WQ), proj(WK), proj(WV)
    A = [softmax_loop([sum(Q[r][c] * K[s][c] for c in range(dq)) / math.sqrt(len(WK[0])) for s in range(R)])
         for r in range(R)]
    Z = [[sum(A[r][s] * V[s][c] for s in range(R)) for c in range(len(WV[0]))] for r in range(R)]
    flat = [z for row in Z for z in row]
    y = [sum(Wout[i][j] * flat[j] for j in range(len(flat))) + bout[i] for i in range(len(bout))]
    return softmax_loop(y), A


def small_params(rng, d=2, K=1, dq=2):
    p = init_params(d, K, dq, rng)
    for k in p:
        p[k] = rng.normal(0, 0.8, p[k].shape)
    return p


# -- attribute weights


def test_feature_weight_examples():
    W = np.array([1.0, 0.0])
    assert relation_feature_weight(np.array([[3.0, 1.0]]), W) == pytest.approx([1.0])
    assert relation_feature_weight(np.array([[3.0, 1.0], [3.0, 1.0]]), W) == pytest.approx([0.5, 0.5])
    p = relation_feature_weight(np.array([[math.log(2), 0.0], [0.0, 0.0]]), W)
    assert p == pytest.approx([2 / 3, 1 / 3], abs=1e-12)
    with pytest.raises(ValueError):
        relation_feature_weight(np.zeros((0, 2)), W)


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=8), st.floats(-10, 10))
def test_feature_weight_shift_invariant(raw, shift):
    feats = np.column_stack([raw, np.zeros(len(raw))])
    W = np.array([1.0, 0.0])
    shifted = np.column_stack([np.array(raw) + shift, np.zeros(len(raw))])
    assert np.allclose(relation_feature_weight(feats, W), relation_feature_weight(shifted, W), atol=1e-12)
    # the bias shifts every raw score equally
    assert np.allclose(relation_feature_weight(feats, W, b_feat=3.0), relation_feature_weight(feats, W), atol=1e-15)


def test_normalise_features():
    edges = [RelationEdge(1, RelationType.HISTORICAL, RelationAttribute(4.0, 3.0)),
             RelationEdge(2, RelationType.SEQUENCE, RelationAttribute(10.0, 0.7))]
    f = normalise_features(edges, now=10.0, mean_gap=2.0)
    assert f.tolist() == [[3.0, math.log1p(3.0)], [0.0, 0.7]]


# -- intra-relation


def test_intra_single_zero_neighbor_is_uniform():
    p = init_params(2, 1, 2, np.random.default_rng(0))
    p["W_in"] = np.zeros((1, 2, 2))
    out, cache = intra_relation_aggregate(np.array([0.3, 0.9]), [[0.1, 0.2]], [[1.0, 1.0]], 0, p, HyperParams(d=2))
    assert out == pytest.approx([0.5, 0.5])
    assert cache["alpha"].tolist() == [[1.0]]


def test_intra_identical_neighbors_split_attention():
    rng = np.random.default_rng(1)
    p = small_params(rng, d=3, K=3)
    out, cache = intra_relation_aggregate(rng.random(3), [[0.2, 0.4, 0.1]] * 2, [[1.0, 0.5]] * 2, 1, p,
                                          HyperParams(d=3, K=3))
    assert np.allclose(cache["alpha"], 0.5)


def test_intra_derived_instance():
    # d=2, K=1, identity input map, all-ones attention vector, p = (2/3, 1/3)
    p = init_params(2, 1, 2, np.random.default_rng(0))
    p["W_in"] = np.eye(2)[None]
    p["W_intra"] = np.ones((3, 1, 4))
    p["W_feat"] = np.array([1.0, 0.0])
    center = np.array([0.1, -0.4])
    nbrs = [[0.5, -0.9], [-0.3, -0.2]]
    feats = [[math.log(2), 0.0], [0.0, 0.0]]
    out, cache = intra_relation_aggregate(center, nbrs, feats, 2, p, HyperParams(d=2, K=1))
    # straight-line: s_j = sum(center) + sum(nbr_j) = (-0.7, -0.8); c = leaky(s * p)
    c1, c2 = 0.2 * (-0.7 * 2 / 3), 0.2 * (-0.8 / 3)
    a1 = math.exp(c1) / (math.exp(c1) + math.exp(c2))
    g = [a1 * 0.5 + (1 - a1) * -0.3, a1 * -0.9 + (1 - a1) * -0.2]
    e = [math.exp(v) for v in g]
    expected = [v / sum(e) for v in e]
    assert cache["p"] == pytest.approx([2 / 3, 1 / 3], abs=1e-12)
    assert out == pytest.approx(expected, abs=1e-12)


@given(seed=st.integers(0, 10_000), d=st.integers(1, 5), K=st.integers(1, 3), M=st.integers(0, 4),
       activation=st.sampled_from(["softmax", "elu"]))
def test_intra_matches_loop_oracle(seed, d, K, M, activation):
    rng = np.random.default_rng(seed)
    p = small_params(rng, d=d, K=K)
    center = rng.random(d)
    nbrs = rng.random((M, d))
    feats = rng.normal(size=(M, 2))
    hyper = HyperParams(d=d, K=K, intra_activation=activation)
    out, _ = intra_relation_aggregate(center, nbrs, feats, 0, p, hyper)
    want = intra_oracle(center.tolist(), nbrs.tolist(), feats.tolist(), p["W_in"].tolist(),
                        p["W_intra"][0].tolist(), p["W_feat"].tolist(), activation=activation)
    assert np.allclose(out, want, atol=1e-12)


def test_intra_is_permutation_invariant():
    rng = np.random.default_rng(5)
    p = small_params(rng, d=4, K=3)
    center = rng.random(4)
    nbrs = rng.random((5, 4))
    feats = rng.normal(size=(5, 2))
    hyper = HyperParams(d=4, K=3)
    out, cache = intra_relation_aggregate(center, nbrs, feats, 1, p, hyper)
    perm = rng.permutation(5)
    out2, cache2 = intra_relation_aggregate(center, nbrs[perm], feats[perm], 1, p, hyper)
    assert np.allclose(out, out2, atol=1e-12)
    assert np.allclose(cache["alpha"][:, perm], cache2["alpha"], atol=1e-12)


def test_intra_dimension_mismatch():
    p = init_params(3, 1, 3, np.random.default_rng(0))
    with pytest.raises(ValueError):
        intra_relation_aggregate(np.zeros(2), [[0.0, 0.0]], [[0.0, 0.0]], 0, p, HyperParams(d=3, K=1))


# -- inter-relation


def test_inter_identical_rows_uniform_attention():
    rng = np.random.default_rng(2)
    p = small_params(rng, d=4, K=2, dq=2)
    out, cache = inter_relation_aggregate(np.tile(rng.random(4), (3, 1)), p)
    assert np.allclose(cache["A"], 1 / 3, atol=1e-15)


def test_inter_zero_projection_is_uniform():
    rng = np.random.default_rng(3)
    p = small_params(rng, d=4, K=1, dq=4)
    p["W_out"] = np.zeros_like(p["W_out"])
    p["b_out"] = np.zeros(4)
    out, _ = inter_relation_aggregate(rng.random((3, 4)), p)
    assert out == pytest.approx([0.25] * 4)


def test_inter_derived_instance():
    p = init_params(2, 1, 2, np.random.default_rng(0))
    p["W_Q"] = np.array([[1.0, 0.0], [0.5, -1.0]])
    p["W_K"] = np.array([[0.2, 0.3], [-0.4, 1.0]])
    p["W_V"] = np.array([[1.0, 2.0], [0.0, -1.0]])
    p["W_out"] = np.arange(12, dtype=float).reshape(2, 6) / 10 - 0.5
    p["b_out"] = np.array([0.1, -0.1])
    H = np.array([[0.2, 0.7], [0.0, 0.0], [0.9, 0.1]])
    out, cache = inter_relation_aggregate(H, p)
    want, A = inter_oracle(H.tolist(), p["W_Q"].tolist(), p["W_K"].tolist(), p["W_V"].tolist(),
                           p["W_out"].tolist(), p["b_out"].tolist())
    assert np.allclose(out, want, atol=1e-13)
    assert np.allclose(cache["A"], A, atol=1e-13)


def test_inter_shape_checked():
    p = small_params(np.random.default_rng(0), d=3, K=1, dq=3)
    with pytest.raises(ValueError):
        inter_relation_aggregate(np.zeros((2, 3)), p)


# -- composite


def groups_from(rng, d, counts):
    return tuple(NeighborGroup(rng.random((m, d)), rng.normal(size=(m, 2)), tuple(range(m))) for m in counts)


def composite_oracle(center, groups, p, hyper):
    rows = [intra_oracle(center.tolist(), g.embeddings.tolist(), g.features.tolist(), p["W_in"].tolist(),
                         p["W_intra"][r].tolist(), p["W_feat"].tolist(), activation=hyper.intra_activation)
            for r, g in enumerate(groups)]
    out, _ = inter_oracle(rows, p["W_Q"].tolist(), p["W_K"].tolist(), p["W_V"].tolist(),
                          p["W_out"].tolist(), p["b_out"].tolist())
    return out


def test_empty_graph_gives_zero():
    rng = np.random.default_rng(0)
    p = small_params(rng, d=3, K=1, dq=3)
    out, cache, trace = neighbor_forward(rng.random(3), groups_from(rng, 3, (0, 0, 0)), p, HyperParams(d=3, K=1),
                                         want_trace=True)
    assert out.tolist() == [0.0, 0.0, 0.0] and cache is None and trace.groups == {}


def test_ablation_bypass_gives_zero():
    rng = np.random.default_rng(0)
    p = small_params(rng, d=3, K=1, dq=3)
    out, _, _ = neighbor_forward(rng.random(3), groups_from(rng, 3, (2, 1, 1)), p,
                                 HyperParams(d=3, K=1, use_neighbors=False))
    assert not out.any()


@pytest.mark.parametrize("counts", [(2, 0, 0), (1, 1, 1), (0, 3, 2)])
def test_composite_matches_oracles(counts):
    rng = np.random.default_rng(sum(counts))
    hyper = HyperParams(d=3, K=2, d_qkv=2)
    p = small_params(rng, d=3, K=2, dq=2)
    center = rng.random(3)
    groups = groups_from(rng, 3, counts)
    out, cache, trace = neighbor_forward(center, groups, p, hyper, want_trace=True)
    assert np.allclose(out, composite_oracle(center, groups, p, hyper), atol=1e-12)
    for r, m in enumerate(counts):
        if m == 0:
            assert cache["inter"]["H"][r].tolist() == [0.0] * 3
    assert set(trace.groups) == {("his", "com", "seq")[r] for r, m in enumerate(counts) if m}
    doc = trace.to_json()
    assert len(doc["inter_attention"]) == 3


@given(seed=st.integers(0, 10_000), activation=st.sampled_from(["softmax", "elu"]),
       counts=st.tuples(st.integers(0, 3), st.integers(0, 3), st.integers(0, 3)).filter(any))
def test_normalisation_invariants(seed, activation, counts):
    rng = np.random.default_rng(seed)
    d, K = int(rng.integers(2, 7)), int(rng.integers(1, 4))
    hyper = HyperParams(d=d, K=K, intra_activation=activation)
    p = small_params(rng, d=d, K=K, dq=hyper.d_attn)
    out, cache, _ = neighbor_forward(rng.random(d), groups_from(rng, d, counts), p, hyper)
    for c in cache["intra"]:
        if c is None:
            continue
        assert np.allclose(c["alpha"].sum(axis=1), 1.0, atol=1e-9)
        assert np.allclose(c["p"].sum(), 1.0, atol=1e-9)
        if activation == "softmax":
            assert np.all(c["heads"] > 0) and np.allclose(c["heads"].sum(axis=1), 1.0, atol=1e-9)
    assert np.allclose(cache["inter"]["A"].sum(axis=1), 1.0, atol=1e-9)
    assert np.all(out > 0) and abs(out.sum() - 1.0) <= 1e-9


def test_softmax_stable_for_large_inputs():
    assert np.allclose(softmax(np.array([1000.0, 1000.0])), [0.5, 0.5])
