"""Randomised property suites for the manifold, the tape and the readout.

Each suite returns a :class:`SuiteResult`; :func:`run_all` runs them in a
fixed order so the CLI and the acceptance tests report the same things.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import lorentz as lz
from . import readout as ro

__all__ = [
    "SuiteResult",
    "random_points",
    "random_tangents",
    "suite_roundtrip",
    "suite_norm_identity",
    "suite_distance",
    "suite_transport",
    "suite_constraint",
    "suite_primitive_gradients",
    "suite_manifold_gradients",
    "suite_karcher",
    "run_all",
]

CURVATURES = (0.5, 1.0, 2.0)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    max_error: float
    tolerance: float
    samples: int
    seconds: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("seconds")  # wall clock would break run-to-run identical output
        return d


def random_points(rng, n, dim, K, scale=1.0) -> np.ndarray:
    """``n`` points on H^dim_K: exp_o of Gaussian tangent vectors."""
    u = rng.normal(0.0, scale, size=(n, dim))
    return lz.expmap0(u, K).data


def random_tangents(rng, x, K, max_norm=3.0) -> np.ndarray:
    """Tangent vectors at ``x`` with Lorentz norm uniform in [0, max_norm]."""
    v = lz.project_tangent(x, rng.normal(size=x.shape), K).data
    nrm = lz.norm(v).data
    target = rng.uniform(0.0, max_norm, size=nrm.shape)
    return v * (target / np.maximum(nrm, 1e-12))[:, None]


def _timed(fn):
    def wrapper(*a, **kw):
        t0 = time.perf_counter()
        res = fn(*a, **kw)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_timed
def suite_roundtrip(rng, n=1000, dim=5, tol=1e-6) -> SuiteResult:
    """``log_x(exp_x(v)) == v`` for ``|v|_L <= 3``."""
    worst = 0.0
    for K in CURVATURES:
        x = random_points(rng, n, dim, K)
        v = random_tangents(rng, x, K)
        back = lz.logmap(x, lz.expmap(x, v, K), K).data
        worst = max(worst, float(np.max(np.abs(back - v))))
    return SuiteResult("roundtrip", worst < tol, worst, tol, n * len(CURVATURES))


@_timed
def suite_norm_identity(rng, n=1000, dim=5, tol=1e-8) -> SuiteResult:
    """``|log_x(y)|_L == sqrt(K) d_K(x, y)``."""
    worst = 0.0
    for K in CURVATURES:
        x = random_points(rng, n, dim, K)
        y = random_points(rng, n, dim, K)
        lhs = lz.norm(lz.logmap(x, y, K)).data
        rhs = np.sqrt(K) * lz.distance(x, y, K).data
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return SuiteResult("norm_identity", worst < tol, worst, tol, n * len(CURVATURES))


@_timed
def suite_distance(rng, n=1000, dim=5, tol=1e-9) -> SuiteResult:
    """Exact symmetry and the triangle inequality (with slack ``tol``)."""
    worst = 0.0
    ok = True
    for K in CURVATURES:
        x, y, z = (random_points(rng, n, dim, K) for _ in range(3))
        dxy = lz.distance(x, y, K).data
        ok &= bool(np.array_equal(dxy, lz.distance(y, x, K).data))
        excess = dxy - lz.distance(x, z, K).data - lz.distance(z, y, K).data
        worst = max(worst, float(np.max(excess)))
    worst = max(worst, 0.0)
    return SuiteResult("distance", ok and worst <= tol, worst, tol, n * len(CURVATURES))


@_timed
def suite_transport(rng, n=1000, dim=5, tol=1e-8) -> SuiteResult:
    """Inner products kept (1e-8), tangency at the target (1e-9), and the
    round trip back (1e-7)."""
    iso = tan = rt = 0.0
    for K in CURVATURES:
        x = random_points(rng, n, dim, K)
        y = random_points(rng, n, dim, K)
        u = random_tangents(rng, x, K)
        v = random_tangents(rng, x, K)
        pu = lz.transport(x, y, u, K).data
        pv = lz.transport(x, y, v, K).data
        iso = max(iso, float(np.max(np.abs(lz.inner(pu, pv).data - lz.inner(u, v).data))))
        tan = max(tan, float(np.max(np.abs(lz.inner(y, pu).data))))
        back = lz.transport(y, x, pu, K).data
        rt = max(rt, float(np.max(np.abs(back - u))))
    passed = iso < tol and tan < 1e-9 and rt < 1e-7
    return SuiteResult("transport", passed, max(iso, tan, rt), tol, n * len(CURVATURES))


@_timed
def suite_constraint(rng, n=1000, dim=5, tol=1e-9) -> SuiteResult:
    """``exp`` lands on the hyperboloid: ``<y, y>_L == -K``.

    The residual is a difference of terms of size ``y0**2``, so it is
    measured relative to that scale.
    """
    worst = 0.0
    for K in CURVATURES:
        x = random_points(rng, n, dim, K)
        y = lz.expmap(x, random_tangents(rng, x, K), K).data
        err = np.abs(lz.inner(y, y).data + K) / (y[:, 0] ** 2)
        worst = max(worst, float(np.max(err)))
    return SuiteResult("constraint", worst < tol, worst, tol, n * len(CURVATURES))


def _prim_cases(rng):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4))
    pos = rng.uniform(1.5, 3.0, size=(3, 4))
    m = rng.normal(size=(4, 2))
    seg = np.array([0, 0, 1])
    A = ad.Tensor(a, requires_grad=True)
    B = ad.Tensor(b, requires_grad=True)
    P = ad.Tensor(pos, requires_grad=True)
    M = ad.Tensor(m, requires_grad=True)
    mask = np.array([[1, -1, 1, -1]] * 3, dtype=float)
    return {
        "add": (lambda: ad.tsum((A + B) * B), [A, B]),
        "sub": (lambda: ad.tsum((A - B) * A), [A, B]),
        "mul": (lambda: ad.tsum(A * B), [A, B]),
        "div": (lambda: ad.tsum(A / P), [A, P]),
        "neg": (lambda: ad.tsum(-A * B), [A, B]),
        "matmul": (lambda: ad.tsum(ad.matmul(A, M) * ad.matmul(A, M)), [A, M]),
        "transpose": (lambda: ad.tsum(ad.transpose(A) * ad.transpose(B)), [A, B]),
        "mean": (lambda: ad.mean(A * A, axis=0)[1], [A]),
        "concat": (lambda: ad.tsum(ad.concat([A, A * B], axis=1) * 1.5), [A, B]),
        "slice": (lambda: ad.tsum(A[1:, 2:] * B[:2, :2]), [A, B]),
        "broadcast": (lambda: ad.tsum(ad.broadcast_to(A[0], (3, 4)) * B), [A, B]),
        "sqrt": (lambda: ad.tsum(ad.sqrt(P)), [P]),
        "exp": (lambda: ad.tsum(ad.exp(A)), [A]),
        "log": (lambda: ad.tsum(ad.log(P)), [P]),
        "cosh": (lambda: ad.tsum(ad.cosh(A)), [A]),
        "sinh": (lambda: ad.tsum(ad.sinh(A)), [A]),
        "arcosh": (lambda: ad.tsum(ad.arcosh(P)), [P]),
        "softplus": (lambda: ad.tsum(ad.softplus(A)), [A]),
        "relu": (lambda: ad.tsum(ad.relu(A + 0.05 * np.sign(a)) * B), [A, B]),
        "clamp": (lambda: ad.tsum(ad.clamp(P, 2.0) * B), [P, B]),
        "select_by_sign": (lambda: ad.tsum(ad.select_by_sign(mask, A * A, B)), [A, B]),
        "softmax": (lambda: ad.tsum(ad.softmax(A) * B), [A, B]),
        "segment_softmax": (lambda: ad.tsum(ad.segment_softmax(A, seg, 2) * B), [A, B]),
    }


@_timed
def suite_primitive_gradients(rng, tol=1e-6) -> SuiteResult:
    """Central differences against every tape primitive."""
    worst = 0.0
    ok = True
    cases = _prim_cases(rng)
    for f, params in cases.values():
        rep = ad.check_gradients(f, params, tol=tol)
        worst = max(worst, rep.max_rel_err)
        ok &= rep.passed
    return SuiteResult("primitive_gradients", ok, worst, tol, len(cases))


@_timed
def suite_manifold_gradients(rng, tol=1e-5) -> SuiteResult:
    """Gradients through distance, exp, log and transport (points kept apart)."""
    K = ad.Tensor(np.array(1.3), requires_grad=True)
    x = ad.Tensor(rng.normal(0, 0.7, size=(4, 3)), requires_grad=True)
    y = ad.Tensor(rng.normal(0, 0.7, size=(4, 3)) + 1.0, requires_grad=True)
    w = ad.Tensor(rng.normal(0, 0.5, size=(4, 3)), requires_grad=True)
    c = rng.normal(size=(4, 4))

    def f():
        px = lz.expmap0(x, K)
        py = lz.expmap0(y, K)
        v = lz.transport0(px, w, K)
        q = lz.expmap(px, v, K)
        lg = lz.logmap(px, py, K)
        pt = lz.transport(px, py, lg, K)
        return ad.tsum(lz.distance(q, py, K)) + ad.tsum(pt * c) + ad.tsum(lz.logmap0(q, K))

    rep = ad.check_gradients(f, [x, y, w, K], tol=tol)
    return SuiteResult("manifold_gradients", rep.passed, rep.max_rel_err, tol, 4)


@_timed
def suite_karcher(rng, clouds=100, n=10, dim=3, tol=1e-6) -> SuiteResult:
    """Frechet objective never increases over 5 steps at eta=0.1, and the
    long-run two-point mean is the geodesic midpoint."""
    K = 1.0
    rise = 0.0
    for _ in range(clouds):
        pts = random_points(rng, n, dim, K)
        _, trail = ro.karcher_flow(pts, K, iters=5, eta=0.1, history=True)
        obj = [ro.frechet_objective(pts, m, K) for m in trail]
        rise = max(rise, float(np.max(np.diff(obj))))
    mid_err = 0.0
    for _ in range(10):
        a, b = random_points(rng, 2, dim, K)
        mid = lz.expmap(a, 0.5 * lz.logmap(a, b, K).data, K).data
        mu = ro.karcher_flow(np.stack([a, b]), K, iters=400, eta=0.1, init="first").data
        mid_err = max(mid_err, float(np.max(np.abs(mu - mid))))
    passed = rise <= 1e-12 and mid_err < tol
    return SuiteResult("karcher", passed, max(rise, mid_err), tol, clouds)


SUITES = (
    suite_roundtrip,
    suite_norm_identity,
    suite_distance,
    suite_transport,
    suite_constraint,
    suite_primitive_gradients,
    suite_manifold_gradients,
    suite_karcher,
)


def run_all(seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    return [suite(rng) for suite in SUITES]
