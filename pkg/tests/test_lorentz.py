import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from brainhgcn import autodiff as ad
from brainhgcn import lorentz as lz
from brainhgcn.selftest import random_points, random_tangents

C1, S1 = math.cosh(1.0), math.sinh(1.0)


def test_inner_examples():
    assert lz.inner([1, 0, 0], [1, 0, 0]).item() == -1
    assert lz.inner([1, 0, 0], [0, 1, 0]).item() == 0
    assert lz.inner([2, 1, 1], [3, 2, 2]).item() == -2


def test_inner_length_mismatch():
    with pytest.raises(ad.ShapeError):
        lz.inner([1, 0, 0], [1, 0])


@pytest.mark.parametrize("K,scale", [(1.0, 1.0), (4.0, 2.0)])
def test_distance_examples(K, scale):
    x = np.array([scale, 0, 0])
    y = scale * np.array([C1, S1, 0])
    assert lz.distance(x, y, K).item() == pytest.approx(1.0, abs=1e-12)
    assert lz.distance(x, x, K).item() == 0.0


def test_expmap_examples():
    out = lz.expmap([1, 0, 0], [0, 1, 0], 1.0).data
    np.testing.assert_allclose(out, [1.543081, 1.175201, 0], atol=1e-6)
    out = lz.expmap([2, 0, 0], [0, 2, 0], 4.0).data
    np.testing.assert_allclose(out, [2 * C1, 2 * S1, 0], atol=1e-12)
    x = np.array([math.sqrt(2.0), 1.0, 0.0])
    np.testing.assert_array_equal(lz.expmap(x, np.zeros(3), 1.0).data, x)


def test_logmap_examples():
    np.testing.assert_allclose(lz.logmap([1, 0, 0], [C1, S1, 0], 1.0).data, [0, 1, 0], atol=1e-12)
    x = np.array([math.sqrt(2.0), 1.0, 0.0])
    np.testing.assert_allclose(lz.logmap(x, x, 1.0).data, 0.0, atol=1e-15)
    # inside the clamp band the coefficient tends to 1, so tiny vectors survive
    v = lz.project_tangent(x, [0.0, 3e-7, -2e-7], 1.0).data
    np.testing.assert_allclose(lz.logmap(x, lz.expmap(x, v, 1.0), 1.0).data, v, atol=1e-12)


def test_transport_examples(rng):
    x = np.array([1.0, 0, 0])
    y = np.array([C1, S1, 0])
    r = lz.transport(x, y, np.array([0.0, 1, 0]), 1.0).data
    assert lz.inner(r, r).item() == pytest.approx(1.0, abs=1e-12)
    assert abs(lz.inner(r, y).item()) < 1e-12
    p = random_points(rng, 5, 4, 1.0)
    v = random_tangents(rng, p, 1.0)
    np.testing.assert_allclose(lz.transport(p, p, v, 1.0).data, v, atol=1e-12)


def test_project_examples():
    np.testing.assert_array_equal(lz.project([0.9, 0, 0], 1.0).data, [1, 0, 0])
    np.testing.assert_allclose(lz.project([5, 3, 4], 1.0).data, [math.sqrt(26), 3, 4])
    x = lz.expmap0([0.3, -0.2, 0.5], 1.0).data
    np.testing.assert_allclose(lz.project(x, 1.0).data, x, atol=1e-15)


def test_project_tangent_examples():
    x = np.array([1.0, 0, 0])
    np.testing.assert_allclose(lz.project_tangent(x, [1, 1, 0], 1.0).data, [0, 1, 0])
    np.testing.assert_allclose(lz.project_tangent(x, [0, 0.5, 2], 1.0).data, [0, 0.5, 2])
    p = lz.expmap0([0.4, 0.1], 2.0).data
    np.testing.assert_allclose(lz.project_tangent(p, p, 2.0).data, 0.0, atol=1e-15)


def test_checked_ops_reject_bad_inputs():
    with pytest.raises(lz.ManifoldError):
        lz.checked_distance([1.0, 1.0, 0], [1.0, 0, 0], 1.0)
    with pytest.raises(lz.ManifoldError):
        lz.checked_expmap([1.0, 0, 0], [1.0, 0, 0], 1.0)  # not tangent
    with pytest.raises(lz.ManifoldError):
        lz.checked_logmap([2.0, 0, 0], [1.0, 0, 0], 1.0)  # first point is on K=4


curv = st.sampled_from([0.5, 1.0, 2.0])
spatial = arrays(np.float64, (4, 3), elements=st.floats(-2, 2))


@given(spatial, spatial, curv)
def test_exp_log_roundtrip(a, b, K):
    x = lz.expmap0(a, K).data
    y = lz.expmap0(b, K).data
    # the 1e-12 clamp on arcosh cannot resolve separations below ~1.4e-6
    assume(np.all(lz.distance(x, y, K).data > 1e-4) or np.array_equal(a, b))
    back = lz.expmap(x, lz.logmap(x, y, K), K).data
    np.testing.assert_allclose(back, y, atol=1e-8 * (1 + np.abs(y).max()))


@given(spatial, spatial, curv)
def test_distance_symmetric_nonnegative(a, b, K):
    x = lz.expmap0(a, K).data
    y = lz.expmap0(b, K).data
    d = lz.distance(x, y, K).data
    assert np.all(d >= 0)
    np.testing.assert_array_equal(d, lz.distance(y, x, K).data)


@given(spatial, curv)
def test_expmap0_on_hyperboloid(a, K):
    x = lz.expmap0(a, K).data
    resid = np.abs(lz.inner(x, x).data + K) / x[:, 0] ** 2
    assert np.all(resid < 1e-12)
    np.testing.assert_allclose(lz.logmap0(x, K).data, a, atol=1e-9)


@given(spatial, curv)
def test_fused_origin_maps_match_general(a, K):
    assume(np.all(np.linalg.norm(a, axis=1) > 1e-4))  # the general log map is clamped near o
    o = np.broadcast_to(lz.origin(K, 3).data, (4, 4))
    u = np.concatenate([np.zeros((4, 1)), a], axis=1)
    np.testing.assert_allclose(lz.expmap0(a, K).data, lz.expmap(o, u, K).data, atol=1e-9, rtol=1e-9)
    x = lz.expmap0(a, K).data
    np.testing.assert_allclose(lz.logmap0(x, K).data, lz.logmap(o, x, K).data[:, 1:], atol=1e-8)


def test_origin_maps_gradcheck_near_zero(rng):
    K = ad.Tensor(np.array(1.7), requires_grad=True)
    u = ad.Tensor(np.vstack([rng.normal(size=(3, 4)), 1e-5 * rng.normal(size=(1, 4))]), requires_grad=True)
    w = rng.normal(size=(4, 5))
    rep = ad.check_gradients(lambda: ad.tsum(lz.expmap0(u, K) * w), [u, K])
    assert rep.passed, rep.blocks
    # logmap0(expmap0(u)) is the identity in K, so feed it a re-projected point instead
    rep = ad.check_gradients(lambda: ad.tsum(lz.logmap0(lz.project(u, K), K) * w[:, 1:4]), [u, K])
    assert rep.passed, rep.blocks


def test_norm_identity_and_transport_isometry(rng):
    for K in (0.5, 2.0):
        x = random_points(rng, 50, 4, K)
        y = random_points(rng, 50, 4, K)
        lhs = lz.norm(lz.logmap(x, y, K)).data
        np.testing.assert_allclose(lhs, math.sqrt(K) * lz.distance(x, y, K).data, atol=1e-8)
        u, v = random_tangents(rng, x, K), random_tangents(rng, x, K)
        pu, pv = lz.transport(x, y, u, K).data, lz.transport(x, y, v, K).data
        np.testing.assert_allclose(lz.inner(pu, pv).data, lz.inner(u, v).data, atol=1e-8)
        np.testing.assert_allclose(lz.transport(y, x, pu, K).data, u, atol=1e-7)


def test_curvature_gradient_through_distance(rng):
    K = ad.Tensor(np.array(0.8), requires_grad=True)
    a = ad.Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    b = rng.normal(size=(3, 2)) + 1.0
    rep = ad.check_gradients(
        lambda: ad.tsum(lz.distance(lz.expmap0(a, K), lz.expmap0(b, K), K)), [a, K], tol=1e-5
    )
    assert rep.passed
