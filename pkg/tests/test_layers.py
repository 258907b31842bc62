import math

import numpy as np
import pytest

from brainhgcn import autodiff as ad
from brainhgcn import layers as ly
from brainhgcn import lorentz as lz
from brainhgcn.graph import SignedGraph, build_signed_graph, pearson_correlation

C1, S1 = math.cosh(1.0), math.sinh(1.0)


def test_lift_examples():
    np.testing.assert_array_equal(ly.lift_to_manifold(np.zeros(3), 2.0).data, [math.sqrt(2), 0, 0, 0])
    np.testing.assert_allclose(ly.lift_to_manifold([1.0, 0.0], 1.0).data, [C1, S1, 0], atol=1e-12)


def test_hyperbolic_linear_examples(rng):
    x = lz.expmap0(rng.normal(size=(5, 3)), 1.5).data
    np.testing.assert_allclose(ly.hyperbolic_linear(x, np.eye(3), np.zeros(3), 1.5).data, x, atol=1e-9)
    o = lz.origin(1.5, 3).data
    np.testing.assert_allclose(ly.hyperbolic_linear(x, np.zeros((3, 3)), np.zeros(3), 1.5).data,
                               np.broadcast_to(o, x.shape), atol=1e-12)
    beta = np.array([0.3, -0.2, 0.7])
    np.testing.assert_allclose(ly.hyperbolic_linear(o, np.eye(3), beta, 1.5).data,
                               lz.expmap0(beta, 1.5).data, atol=1e-12)


def test_hyperbolic_linear_output_on_manifold(rng):
    x = lz.expmap0(rng.normal(size=(6, 4)), 0.7).data
    y = ly.hyperbolic_linear(x, rng.normal(size=(3, 4)), rng.normal(size=3), 0.7).data
    lz.check_point(y, 0.7)


def test_attention_examples():
    o = lz.origin(1.0, 2).data
    assert ly.attention_scores(o, o, 4, 1.0, 1.0).item() == pytest.approx(-0.5)
    far = [lz.expmap0([r, 0.0], 1.0).data for r in (0.0, 0.5, 1.0, 2.0)]
    s = [ly.attention_scores(o, p, 4, 1.0, 1.0).item() for p in far]
    assert all(a > b for a, b in zip(s, s[1:]))
    s2 = [ly.attention_scores(o, p, 4, 2.0, 1.0).item() for p in far]
    np.testing.assert_allclose(s2, np.array(s) / 2)


def test_attention_bound(rng):
    K = 1.7
    q = lz.expmap0(rng.normal(size=(20, 3)), K).data
    k = lz.expmap0(rng.normal(size=(20, 3)), K).data
    s = ly.attention_scores(q, k, 3, 0.5, K).data
    tau = 0.5 / math.sqrt(K)
    assert np.all(s <= -K / (math.sqrt(3) * tau) + 1e-12)


def test_signed_softmax_examples():
    wp, wn = ly.signed_softmax(np.array([0.3, 1.0, 1.0]), [0], [1, 2])
    np.testing.assert_array_equal(wp.data, [1.0])
    np.testing.assert_allclose(wn.data, [0.5, 0.5])
    wp, wn = ly.signed_softmax(np.array([0.3, 2.0]), [0, 1], [])
    assert wn.data.shape == (0,) and np.isclose(wp.data.sum(), 1.0)
    with pytest.raises(ValueError):
        ly.signed_softmax(np.zeros(2), [0, 1], [1])


def test_signed_aggregate_examples(rng):
    K = 1.0
    h = lz.expmap0([0.2, -0.1], K).data
    v = lz.expmap0([1.0, 0.5], K).data
    values = v[None, None, :]  # (H=1, J=1, D)
    one = np.ones((1, 1))
    np.testing.assert_allclose(ly.signed_aggregate(h, values, None, None, [], [], K).data, h, atol=1e-15)
    out = ly.signed_aggregate(h, values, one, np.zeros((0, 1)), [0], [], K).data
    np.testing.assert_allclose(out, v, atol=1e-8)
    both = np.stack([v, v])[None]
    out = ly.signed_aggregate(h, both, one, one, [0], [1], K).data
    np.testing.assert_allclose(out, h, atol=1e-12)


def test_layer_update_examples(rng):
    y = lz.expmap0(rng.normal(size=(4, 3)), 0.8).data
    np.testing.assert_allclose(ly.layer_update(y, 0.8, 0.8, "identity").data, y, atol=1e-9)
    o = lz.origin(0.8, 3).data
    np.testing.assert_allclose(ly.layer_update(o, 0.8, 2.0, "relu").data, lz.origin(2.0, 3).data)
    neg = lz.expmap0([-0.5, -1.0, -0.1], 0.8).data
    np.testing.assert_allclose(ly.layer_update(neg, 0.8, 2.0, "relu").data, lz.origin(2.0, 3).data)
    out = ly.layer_update(y, 0.8, 2.0, "relu").data
    lz.check_point(out, 2.0)


def test_curvature_parameterisation():
    for K in (0.5, 1.0, 3.0):
        assert ly.curvature(ly.rho_for_curvature(K)).item() == pytest.approx(K)
    assert ly.curvature(-50.0).item() > 0


def _params(rng, d_in, d, H, scale=0.5, identity=False):
    W = np.eye(d, d_in) if identity else rng.normal(0, scale, (d, d_in))
    b = np.zeros(d) if identity else rng.normal(0, 0.1, d)
    heads = [ad.Tensor(rng.normal(0, scale, (H, d, d)), requires_grad=True) for _ in range(3)]
    return ly.LayerParams(ad.Tensor(W, requires_grad=True), ad.Tensor(b, requires_grad=True), *heads,
                          ad.Tensor(np.array(0.3), requires_grad=True))


def reference_layer(x, g, p, cfg, K_prev, K_next, self_loops=True):
    """Node-by-node composition of the building blocks."""
    H = cfg.heads
    d = p.W.shape[0]
    h = ly.hyperbolic_linear(x, p.W.data, p.b.data, K_prev).data
    uh = lz.logmap0(h, K_prev).data
    q = np.stack([lz.expmap0(uh @ p.Wq.data[m].T, K_prev).data for m in range(H)], 1)
    k = np.stack([lz.expmap0(uh @ p.Wk.data[m].T, K_prev).data for m in range(H)], 1)
    v = np.stack([lz.expmap0(uh @ p.Wv.data[m].T, K_prev).data for m in range(H)], 0)  # (H, N, D)
    pos_n, neg_n = g.neighbors(1), g.neighbors(-1)
    out = []
    for i in range(g.n):
        pos = sorted(pos_n[i] + ([i] if self_loops else []))
        neg = neg_n[i]
        nb = pos + neg
        s = np.stack([ly.attention_scores(q[i, m], k[nb, m], d, cfg.tau0, K_prev).data for m in range(H)], 1)
        wp, wn = ly.signed_softmax(s, np.arange(len(pos)), np.arange(len(pos), len(nb)))
        y = ly.signed_aggregate(h[i], v[:, nb], wp.data, wn.data, np.arange(len(pos)),
                                np.arange(len(pos), len(nb)), K_prev)
        out.append(ly.layer_update(y, K_prev, K_next, cfg.activation).data)
    return np.stack(out)


def _graph(rng, n=7, T=12, k=2):
    x = rng.normal(size=(n, T))
    return build_signed_graph(pearson_correlation(x), k)


@pytest.mark.parametrize("activation", ["relu", "identity"])
def test_batched_layer_matches_reference(rng, activation):
    g = _graph(rng)
    cfg = ly.LayerConfig(d=4, heads=3, tau0=0.8, activation=activation)
    p = _params(rng, 5, 4, 3)
    x = lz.expmap0(rng.normal(0, 0.6, size=(g.n, 5)), 1.3).data
    edges = ly.EdgeIndex.from_graphs([g])
    got = ly.forward_layer(ad.Tensor(x), edges, p, cfg, 1.3, 0.6).data
    np.testing.assert_allclose(got, reference_layer(x, g, p, cfg, 1.3, 0.6), atol=1e-10)


def test_batch_is_disjoint_union(rng):
    g1, g2 = _graph(rng, 5), _graph(rng, 6)
    cfg = ly.LayerConfig(d=3, heads=2)
    p = _params(rng, 4, 3, 2)
    x1 = lz.expmap0(rng.normal(size=(5, 4)), 1.0).data
    x2 = lz.expmap0(rng.normal(size=(6, 4)), 1.0).data
    both = ly.forward_layer(ad.Tensor(np.vstack([x1, x2])), ly.EdgeIndex.from_graphs([g1, g2]), p, cfg, 1.0, 1.0).data
    one = ly.forward_layer(ad.Tensor(x1), ly.EdgeIndex.from_graphs([g1]), p, cfg, 1.0, 1.0).data
    np.testing.assert_allclose(both[:5], one, atol=1e-13)


def test_edgeless_identity_layer(rng):
    n = 4
    g = SignedGraph(np.zeros((n, 3)), np.zeros((0, 2)), [], np.zeros((0, 2)), [])
    cfg = ly.LayerConfig(d=3, heads=2, activation="identity")
    p = _params(rng, 3, 3, 2, identity=True)
    x = lz.expmap0(rng.normal(size=(n, 3)), 1.0).data
    edges = ly.EdgeIndex.from_graphs([g], self_loops=False)
    out = ly.forward_layer(ad.Tensor(x), edges, p, cfg, 1.0, 1.0).data
    np.testing.assert_allclose(out, x, atol=1e-8)


def test_identical_nodes_stay_identical(rng):
    n = 5
    pairs = np.array([(i, j) for i in range(n) for j in range(i + 1, n)])
    g = SignedGraph(np.zeros((n, 3)), pairs, np.full(len(pairs), 0.9), np.zeros((0, 2)), [])
    p = _params(rng, 3, 4, 2)
    x = np.tile(lz.expmap0(rng.normal(size=3), 1.0).data, (n, 1))
    out = ly.forward_layer(ad.Tensor(x), ly.EdgeIndex.from_graphs([g]), p, ly.LayerConfig(d=4, heads=2), 1.0, 1.0).data
    np.testing.assert_allclose(out, np.tile(out[0], (n, 1)), atol=1e-12)


def test_layer_is_permutation_equivariant(rng):
    g = _graph(rng)
    cfg = ly.LayerConfig(d=4, heads=2)
    p = _params(rng, 5, 4, 2)
    x = lz.expmap0(rng.normal(size=(g.n, 5)), 1.0).data
    perm = rng.permutation(g.n)
    out = ly.forward_layer(ad.Tensor(x), ly.EdgeIndex.from_graphs([g]), p, cfg, 1.0, 1.0).data
    outp = ly.forward_layer(ad.Tensor(x[perm]), ly.EdgeIndex.from_graphs([g.permuted(perm)]), p, cfg, 1.0, 1.0).data
    np.testing.assert_allclose(outp, out[perm], atol=1e-12)


@pytest.mark.parametrize("flag", ["euclidean_attention", "unsigned_aggregation", "euclidean_geometry"])
def test_layer_gradcheck(rng, flag):
    g = _graph(rng, n=6, k=2)
    cfg = ly.LayerConfig(d=4, heads=2, **{flag: True})
    p = _params(rng, 4, 4, 2)
    unsigned = flag == "unsigned_aggregation"
    edges = ly.EdgeIndex.from_graphs([g], unsigned=unsigned)
    if flag == "euclidean_geometry":
        x = ad.Tensor(rng.normal(size=(6, 4)))
        w = rng.normal(size=(6, 4))

        def f():
            return ad.tsum(ly.forward_layer(x, edges, p, cfg, None, None) * w)
        params = [p.W, p.b, p.Wq, p.Wk, p.Wv]
    else:
        x = ad.Tensor(lz.expmap0(rng.normal(size=(6, 4)), 1.0).data)
        w = rng.normal(size=(6, 5))
        rho_prev = ad.Tensor(np.array(0.1), requires_grad=True)

        def f():
            return ad.tsum(ly.forward_layer(x, edges, p, cfg, ly.curvature(rho_prev), ly.curvature(p.rho)) * w)
        params = [p.W, p.b, p.Wq, p.Wk, p.Wv, p.rho, rho_prev]
    rep = ad.check_gradients(f, params, tol=1e-4)
    assert rep.passed, rep.blocks


def test_full_layer_gradcheck(rng):
    g = _graph(rng, n=6, k=2)
    cfg = ly.LayerConfig(d=4, heads=2)
    p = _params(rng, 4, 4, 2)
    edges = ly.EdgeIndex.from_graphs([g])
    x = ad.Tensor(lz.expmap0(rng.normal(size=(6, 4)), 1.0).data)
    w = rng.normal(size=(6, 5))
    rep = ad.check_gradients(
        lambda: ad.tsum(ly.forward_layer(x, edges, p, cfg, 1.0, ly.curvature(p.rho)) * w),
        {"W": p.W, "b": p.b, "Wq": p.Wq, "Wk": p.Wk, "Wv": p.Wv, "rho": p.rho}, tol=1e-4,
    )
    assert rep.passed, rep.blocks


def test_edge_index_buckets():
    g = build_signed_graph(np.array([[1, 0.5, -0.3], [0.5, 1, -0.2], [-0.3, -0.2, 1]]), 1)
    e = ly.EdgeIndex.from_graphs([g])
    assert len(e) == 2 + 4 + 3
    assert np.all(np.diff(e.seg) >= 0)
    assert set(e.seg[e.sign < 0] % 2) == {1}
    u = ly.EdgeIndex.from_graphs([g], unsigned=True)
    assert np.all(u.sign == 1.0) and u.n_seg == 3
