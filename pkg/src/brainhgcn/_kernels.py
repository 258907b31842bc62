"""Hot gather/scatter kernels used by the autodiff engine.

Every kernel has two implementations: a numba ``@njit`` loop and a pure
numpy/scipy fallback.  The numba path is the default; set
``BRAINHGCN_DISABLE_NUMBA=1`` before import to force the numpy path (also
used automatically when numba is not importable).

All kernels operate on float64 arrays and int64 index arrays and never
mutate their inputs.
"""

from __future__ import annotations

import os

import numpy as np
import scipy.sparse as sp

_FLAG = os.environ.get("BRAINHGCN_DISABLE_NUMBA", "").strip().lower()

try:  # pragma: no cover - import guard
    import numba

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover
    numba = None
    NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE and _FLAG not in ("1", "true", "yes", "on")

__all__ = [
    "USE_NUMBA",
    "NUMBA_AVAILABLE",
    "edge_inner",
    "edge_scatter",
    "segment_sum",
    "segment_max",
    "numpy_kernels",
    "numba_kernels",
]


# --------------------------------------------------------------------------
# numpy reference path
# --------------------------------------------------------------------------


def _edge_inner_np(a, b, row, col, sign):
    return np.sum(a[row] * sign * b[col], axis=-1)


def _edge_scatter_np(c, v, row, col, n):
    e, h = c.shape
    out = np.empty((n, h, v.shape[2]))
    for m in range(h):
        mat = sp.csr_matrix((c[:, m], (row, col)), shape=(n, v.shape[0]))
        out[:, m, :] = mat @ v[:, m, :]
    return out


def _segment_sum_np(x, seg, n):
    flat = _flat2(x)
    mat = sp.csr_matrix(
        (np.ones(x.shape[0]), (seg, np.arange(x.shape[0]))), shape=(n, x.shape[0])
    )
    return np.asarray(mat @ flat).reshape((n,) + x.shape[1:])


def _segment_max_np(x, seg, n):
    out = np.full((n,) + x.shape[1:], -np.inf)
    np.maximum.at(out, seg, x)
    return out


# --------------------------------------------------------------------------
# numba path
# --------------------------------------------------------------------------

if NUMBA_AVAILABLE:

    @numba.njit(cache=True)
    def _edge_inner_nb(a, b, row, col, sign):
        n_e = row.shape[0]
        n_h = b.shape[1]
        n_d = b.shape[2]
        shared = a.shape[1] == 1  # one row of ``a`` serves every head
        out = np.empty((n_e, n_h))
        for e in range(n_e):
            i = row[e]
            j = col[e]
            for h in range(n_h):
                ha = 0 if shared else h
                s = 0.0
                for k in range(n_d):
                    s += sign[k] * a[i, ha, k] * b[j, h, k]
                out[e, h] = s
        return out

    @numba.njit(cache=True)
    def _edge_scatter_nb(c, v, row, col, n):
        n_e = row.shape[0]
        n_h = v.shape[1]
        n_d = v.shape[2]
        out = np.zeros((n, n_h, n_d))
        for e in range(n_e):
            i = row[e]
            j = col[e]
            for h in range(n_h):
                ce = c[e, h]
                for k in range(n_d):
                    out[i, h, k] += ce * v[j, h, k]
        return out

    @numba.njit(cache=True)
    def _segment_sum_nb(x, seg, n):
        m = x.shape[1]
        out = np.zeros((n, m))
        for e in range(x.shape[0]):
            s = seg[e]
            for k in range(m):
                out[s, k] += x[e, k]
        return out

    @numba.njit(cache=True)
    def _segment_max_nb(x, seg, n):
        m = x.shape[1]
        out = np.full((n, m), -np.inf)
        for e in range(x.shape[0]):
            s = seg[e]
            for k in range(m):
                if x[e, k] > out[s, k]:
                    out[s, k] = x[e, k]
        return out


def _flat2(x):
    return np.ascontiguousarray(x.reshape(x.shape[0], int(np.prod(x.shape[1:]))))


def _nb_edge_inner(a, b, row, col, sign):
    return _edge_inner_nb(
        np.ascontiguousarray(a), np.ascontiguousarray(b), row, col, sign
    )


def _nb_edge_scatter(c, v, row, col, n):
    return _edge_scatter_nb(np.ascontiguousarray(c), np.ascontiguousarray(v), row, col, n)


def _nb_segment_sum(x, seg, n):
    return _segment_sum_nb(_flat2(x), seg, n).reshape((n,) + x.shape[1:])


def _nb_segment_max(x, seg, n):
    return _segment_max_nb(_flat2(x), seg, n).reshape((n,) + x.shape[1:])


class _KernelSet:
    def __init__(self, edge_inner, edge_scatter, segment_sum, segment_max, name):
        self.edge_inner = edge_inner
        self.edge_scatter = edge_scatter
        self.segment_sum = segment_sum
        self.segment_max = segment_max
        self.name = name


numpy_kernels = _KernelSet(
    _edge_inner_np, _edge_scatter_np, _segment_sum_np, _segment_max_np, "numpy"
)
numba_kernels = (
    _KernelSet(_nb_edge_inner, _nb_edge_scatter, _nb_segment_sum, _nb_segment_max, "numba")
    if NUMBA_AVAILABLE
    else None
)
_active = numba_kernels if USE_NUMBA else numpy_kernels


def edge_inner(a, b, row, col, sign):
    """Per-edge signed inner product ``sum_k sign[k] * a[row, :, k] * b[col, :, k]``.

    ``a`` is (N, H, D) or (N, 1, D) (shared across heads), ``b`` is
    (M, H, D), ``row``/``col`` are (E,) int64.  Returns (E, H).
    """
    return _active.edge_inner(a, b, row, col, sign)


def edge_scatter(c, v, row, col, n):
    """``out[row[e], h] += c[e, h] * v[col[e], h]``; returns (n, H, D)."""
    return _active.edge_scatter(c, v, row, col, n)


def segment_sum(x, seg, n):
    """Sum rows of ``x`` into ``n`` buckets by ``seg`` (trailing dims kept)."""
    return _active.segment_sum(x, seg, n)


def segment_max(x, seg, n):
    """Row-wise max into ``n`` buckets; empty buckets hold ``-inf``."""
    return _active.segment_max(x, seg, n)


def backend_name() -> str:
    return _active.name
