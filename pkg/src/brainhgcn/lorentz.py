"""Hyperboloid (Lorentz model) operations with curvature -1/K.

Points are ambient vectors ``x`` in R^{n+1} with the time coordinate first,
``<x, x>_L = -K`` and ``x[0] > 0``.  ``K`` may be a python float or a scalar
:class:`~brainhgcn.autodiff.Tensor` (learnable curvature).  All functions
work on arbitrary leading batch dimensions and are differentiable through
the tape.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor

#: arcosh arguments are clamped to at least this value (coincident points).
ACOSH_FLOOR = 1.0 + 1e-12
#: tangent norms below this are treated as zero in ``expmap``.
NORM_FLOOR = 1e-12
#: tolerance used by the validation helpers (scaled by magnitude).
CHECK_TOL = 1e-6

__all__ = [
    "ManifoldError",
    "inner",
    "norm",
    "origin",
    "distance",
    "expmap",
    "logmap",
    "expmap0",
    "logmap0",
    "transport",
    "project",
    "project_tangent",
    "check_point",
    "check_tangent",
]


class ManifoldError(ValueError):
    """A point or vector violates a hyperboloid precondition."""


_SIGNATURES: dict = {}


def _signature(d: int) -> np.ndarray:
    sig = _SIGNATURES.get(d)
    if sig is None:
        sig = np.ones(d)
        sig[0] = -1.0
        _SIGNATURES[d] = sig
    return sig


def _k(K) -> Tensor:
    return as_tensor(K)


def _kval(K) -> float | np.ndarray:
    return K.data if isinstance(K, Tensor) else np.asarray(K, dtype=float)


def inner(x, y, keepdims: bool = False) -> Tensor:
    """Lorentzian inner product ``-x0*y0 + sum_i xi*yi`` over the last axis."""
    x, y = as_tensor(x), as_tensor(y)
    d = x.shape[-1] if x.ndim else 0
    if x.ndim == 0 or y.ndim == 0 or y.shape[-1] != d:
        raise ad.ShapeError("lorentz_inner", [x.shape, y.shape], "length mismatch")
    if d < 2:
        raise ad.ShapeError("lorentz_inner", [x.shape, y.shape], "need at least 2 coordinates")
    sig = _signature(d)
    try:
        out = (x.data * y.data) @ sig
    except ValueError as exc:
        raise ad.ShapeError("lorentz_inner", [x.shape, y.shape], str(exc)) from None
    if keepdims:
        out = out[..., None]

    def vjp(g):
        gg = g if keepdims else g[..., None]
        gx = ad._unbroadcast(gg * sig * y.data, x.shape) if x.requires_grad else None
        gy = ad._unbroadcast(gg * sig * x.data, y.shape) if y.requires_grad else None
        return gx, gy

    return ad.record_op("lorentz_inner", (x, y), out, vjp)


def norm(v, keepdims: bool = False) -> Tensor:
    """``sqrt(<v, v>_L)`` for spacelike (tangent) vectors, floored at NORM_FLOOR."""
    sq = inner(v, v, keepdims=keepdims)
    return ad.sqrt(ad.clamp(sq, NORM_FLOOR**2))


def origin(K, dim: int) -> Tensor:
    """``(sqrt(K), 0, ..., 0)`` on the hyperboloid of dimension ``dim``."""
    head = ad.reshape(ad.sqrt(_k(K)), (1,))
    return ad.concat([head, Tensor(np.zeros(dim))], axis=0)


def project(p, K) -> Tensor:
    """Keep the spatial part, recompute ``x0 = sqrt(K + |s|^2)``."""
    p = as_tensor(p)
    s = p[..., 1:]
    x0 = ad.sqrt(_k(K) + ad.tsum(s * s, axis=-1, keepdims=True))
    return ad.concat([x0, s], axis=-1)


def project_tangent(x, v, K) -> Tensor:
    """Lorentz-orthogonal projection of ``v`` onto the tangent space at ``x``."""
    x = as_tensor(x)
    return as_tensor(v) + (inner(x, v, keepdims=True) / _k(K)) * x


def distance(x, y, K) -> Tensor:
    """Geodesic distance ``arcosh(-<x,y>_L / K)``; exactly 0 inside the clamp band."""
    raw = -inner(x, y) / _k(K)
    live = (raw.data > ACOSH_FLOOR).astype(float)
    return ad.arcosh(ad.clamp(raw, ACOSH_FLOOR)) * live


def expmap(x, v, K) -> Tensor:
    """Move from ``x`` along tangent ``v``; the result is re-projected."""
    x, v = as_tensor(x), as_tensor(v)
    K = _k(K)
    _check_spacelike(inner(v, v, keepdims=True).data, v.data)
    sk = ad.sqrt(K)
    # |v|_L as the Euclidean norm of v carried to the origin; the direct
    # -v0^2 + |v_s|^2 cancels badly far from the origin
    u = v[..., 1:] - (v[..., :1] / (x[..., :1] + sk)) * x[..., 1:]
    n = ad.sqrt(ad.clamp(ad.tsum(u * u, axis=-1, keepdims=True), NORM_FLOOR**2))
    t = n / sk
    out = ad.cosh(t) * x + (sk * ad.sinh(t) / n) * v
    return project(out, K)


def logmap(x, y, K) -> Tensor:
    """Tangent vector at ``x`` pointing to ``y`` with L-norm ``sqrt(K) d(x, y)``."""
    x, y = as_tensor(x), as_tensor(y)
    K = _k(K)
    ip = inner(x, y, keepdims=True)
    a = ad.clamp(-ip / K, ACOSH_FLOOR)
    coef = ad.arcosh(a) / ad.sqrt((a - 1.0) * (a + 1.0))
    return coef * (y + (ip / K) * x)


def _sinhc_slope(t):
    # d/dt (sinh t / t), series below 1e-3 where the closed form cancels
    small = t < 1e-3
    ts = np.where(small, 1.0, t)
    exact = (np.cosh(ts) - np.sinh(ts) / ts) / ts
    return np.where(small, t / 3.0 + t**3 / 30.0, exact)


def _acoshc_slope(theta):
    # d/da (arcosh a / sqrt(a^2 - 1)) at a = cosh(theta)
    small = theta < 1e-3
    th = np.where(small, 1.0, theta)
    sh = np.sinh(th)
    exact = (sh - th * np.cosh(th)) / sh**3
    return np.where(small, -1.0 / 3.0 + 2.0 * theta**2 / 15.0, exact)


def expmap0(u, K) -> Tensor:
    """Exponential map at the origin of the tangent vector ``(0, u)``.

    ``u`` holds spatial coordinates only (shape ``(..., d)``); the result has
    ``d + 1`` coordinates, with ``x0`` recomputed from the spatial part.
    Recorded as one fused tape op.
    """
    u, K = as_tensor(u), _k(K)
    if u.ndim == 0:
        raise ad.ShapeError("expmap0", [u.shape], "need a vector")
    kv = float(K.data)
    sk = np.sqrt(kv)
    r = np.sum(u.data * u.data, axis=-1, keepdims=True)
    live = r > NORM_FLOOR**2
    n = np.sqrt(np.where(live, r, NORM_FLOOR**2))
    t = n / sk
    coef = np.sinh(t) / t
    xs = coef * u.data
    x0 = np.sqrt(kv + coef * coef * r)
    out = np.concatenate([x0, xs], axis=-1)

    def vjp(g):
        g0, gs = g[..., :1], g[..., 1:]
        g_coef = np.sum(gs * u.data, axis=-1, keepdims=True) + g0 * coef * r / x0
        slope = _sinhc_slope(t)
        g_r = g0 * coef * coef / (2.0 * x0) + np.where(live, g_coef * slope / (sk * 2.0 * n), 0.0)
        gu = coef * gs + 2.0 * g_r * u.data if u.requires_grad else None
        gK = None
        if K.requires_grad:
            d_sk = -g_coef * slope * t / sk
            gK = np.sum(g0 / (2.0 * x0) + d_sk / (2.0 * sk)).reshape(K.shape)
        return gu, gK

    return ad.record_op("expmap0", (u, K), out, vjp)


def logmap0(x, K) -> Tensor:
    """Spatial part of the logarithmic map at the origin (leading 0 dropped).

    Recorded as one fused tape op.
    """
    x, K = as_tensor(x), _k(K)
    if x.ndim == 0 or x.shape[-1] < 2:
        raise ad.ShapeError("logmap0", [x.shape], "need at least 2 coordinates")
    kv = float(K.data)
    sk = np.sqrt(kv)
    raw = x.data[..., :1] / sk
    live = raw > ACOSH_FLOOR
    a = np.where(live, raw, ACOSH_FLOOR)
    theta = np.arccosh(a)
    coef = theta / np.sqrt((a - 1.0) * (a + 1.0))
    xs = x.data[..., 1:]
    out = coef * xs

    def vjp(g):
        g_a = np.where(live, np.sum(g * xs, axis=-1, keepdims=True) * _acoshc_slope(theta), 0.0)
        gx = None
        if x.requires_grad:
            gx = np.concatenate([g_a / sk, coef * g], axis=-1)
        gK = None
        if K.requires_grad:
            # a = x0 / sqrt(K)  =>  da/dK = -a / (2K)
            gK = np.sum(-g_a * a / (2.0 * kv)).reshape(K.shape)
        return gx, gK

    return ad.record_op("logmap0", (x, K), out, vjp)


def transport(x, y, v, K) -> Tensor:
    """Parallel transport of ``v`` from ``T_x`` to ``T_y`` along the geodesic."""
    x, y, v = as_tensor(x), as_tensor(y), as_tensor(v)
    coef = inner(y, v, keepdims=True) / (_k(K) - inner(x, y, keepdims=True))
    return v + coef * (x + y)


def transport0(y, v, K) -> Tensor:
    """Transport from the origin; ``v`` given by spatial coordinates only."""
    y, v = as_tensor(y), as_tensor(v)
    K = _k(K)
    zero = Tensor(np.zeros(v.shape[:-1] + (1,)))
    v_amb = ad.concat([zero, v], axis=-1)
    sk = ad.sqrt(K)
    # <y, v>_L reduces to the spatial dot product since v0 = 0
    ys = y[..., 1:]
    num = ad.tsum(ys * v, axis=-1, keepdims=True)
    den = K + sk * y[..., :1]
    o = origin(K, v.shape[-1])
    return v_amb + (num / den) * (o + y)


# --------------------------------------------------------------------------
# validation helpers (numpy only, not recorded)
# --------------------------------------------------------------------------


def _check_spacelike(sqn: np.ndarray, v: np.ndarray) -> None:
    scale = 1.0 + np.sum(v * v, axis=-1, keepdims=True)
    if np.any(sqn < -1e-9 * scale):
        raise ManifoldError("tangent vector is timelike: <v,v>_L < 0 beyond tolerance")


def check_point(x, K, tol: float = CHECK_TOL) -> None:
    """Raise :class:`ManifoldError` unless every row of ``x`` lies on H_K."""
    x = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=float)
    k = _kval(K)
    sq = (x * x) @ _signature(x.shape[-1])
    scale = 1.0 + np.sum(x * x, axis=-1)
    if np.any(np.abs(sq + k) > tol * scale) or np.any(x[..., 0] <= 0):
        raise ManifoldError(f"point not on the hyperboloid with K={float(np.mean(k)):g}")


def check_tangent(x, v, tol: float = CHECK_TOL) -> None:
    x = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=float)
    v = v.data if isinstance(v, Tensor) else np.asarray(v, dtype=float)
    ip = (x * v) @ _signature(x.shape[-1])
    scale = 1.0 + np.linalg.norm(x, axis=-1) * np.linalg.norm(v, axis=-1)
    if np.any(np.abs(ip) > tol * scale):
        raise ManifoldError("vector is not tangent at the base point; project it first")


def checked_distance(x, y, K) -> Tensor:
    """:func:`distance` after verifying both points lie on H_K."""
    check_point(x, K)
    check_point(y, K)
    return distance(x, y, K)


def checked_expmap(x, v, K) -> Tensor:
    check_point(x, K)
    check_tangent(x, v)
    return expmap(x, v, K)


def checked_logmap(x, y, K) -> Tensor:
    check_point(x, K)
    check_point(y, K)
    return logmap(x, y, K)


def checked_transport(x, y, v, K) -> Tensor:
    check_point(x, K)
    check_point(y, K)
    check_tangent(x, v)
    return transport(x, y, v, K)
