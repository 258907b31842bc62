import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from brainhgcn import _kernels as kn

pytestmark = pytest.mark.skipif(not kn.NUMBA_AVAILABLE, reason="numba not installed")


@st.composite
def edge_problem(draw):
    n = draw(st.integers(1, 8))
    h = draw(st.integers(1, 3))
    d = draw(st.integers(1, 4))
    e = draw(st.integers(0, 20))
    seed = draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    row = rng.integers(0, n, e).astype(np.int64)
    col = rng.integers(0, n, e).astype(np.int64)
    return rng, n, h, d, row, col


@given(edge_problem(), st.booleans())
def test_edge_inner_backends_agree(prob, shared):
    rng, n, h, d, row, col = prob
    a = rng.normal(size=(n, 1 if shared else h, d))
    b = rng.normal(size=(n, h, d))
    sign = rng.choice([-1.0, 1.0], d)
    ref = kn.numpy_kernels.edge_inner(a, b, row, col, sign)
    got = kn.numba_kernels.edge_inner(a, b, row, col, sign)
    assert got.shape == ref.shape == (len(row), h)
    np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-12)


@given(edge_problem())
def test_edge_scatter_backends_agree(prob):
    rng, n, h, d, row, col = prob
    c = rng.normal(size=(len(row), h))
    v = rng.normal(size=(n, h, d))
    ref = kn.numpy_kernels.edge_scatter(c, v, row, col, n)
    got = kn.numba_kernels.edge_scatter(c, v, row, col, n)
    np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-12)


@given(edge_problem())
def test_segment_reductions_agree(prob):
    rng, n, h, d, row, _ = prob
    x = rng.normal(size=(len(row), h, d))
    for name in ("segment_sum", "segment_max"):
        ref = getattr(kn.numpy_kernels, name)(x, row, n)
        got = getattr(kn.numba_kernels, name)(x, row, n)
        np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-12)


def test_segment_max_empty_bucket():
    x = np.array([[1.0], [3.0]])
    for ks in (kn.numpy_kernels, kn.numba_kernels):
        out = ks.segment_max(x, np.array([0, 0]), 2)
        assert out[0, 0] == 3.0 and out[1, 0] == -np.inf


def test_inputs_not_mutated(rng):
    a = rng.normal(size=(4, 2, 3))
    row = np.array([0, 1, 3])
    col = np.array([2, 2, 0])
    c = rng.normal(size=(3, 2))
    keep = (a.copy(), c.copy())
    kn.numba_kernels.edge_scatter(c, a, row, col, 4)
    kn.numba_kernels.edge_inner(a, a, row, col, np.ones(3))
    assert np.array_equal(a, keep[0]) and np.array_equal(c, keep[1])


def test_env_flag_selects_numpy():
    env = dict(os.environ, BRAINHGCN_DISABLE_NUMBA="1")
    out = subprocess.run(
        [sys.executable, "-c", "from brainhgcn import _kernels; print(_kernels.backend_name())"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "numpy"
