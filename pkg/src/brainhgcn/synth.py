"""Synthetic hierarchical cohorts and the tree-embedding distortion experiment."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import lorentz as lz
from .graph import SubjectTimeSeries, save_time_series, write_manifest

__all__ = [
    "SynthSpec",
    "SynthError",
    "class_tree",
    "generate_subject",
    "generate_dataset",
    "write_dataset",
    "DistortionReport",
    "binary_tree",
    "tree_distances",
    "classical_mds",
    "embed_tree_distortion",
]


class SynthError(ValueError):
    pass


@dataclass
class SynthSpec:
    n_subjects: int = 100  # per class
    roi_count: int = 32
    time_points: int = 64
    branching: tuple = (2, 3)  # class 0, class 1
    noise: float = 0.1
    rewire: float = 0.0
    coupling: float = 0.5
    seed: int = 42

    def __post_init__(self):
        self.branching = tuple(int(b) for b in self.branching)
        if self.roi_count < 4:
            raise SynthError("roi_count must be >= 4")
        if self.time_points < 8:
            raise SynthError("time_points must be >= 8")
        if self.noise < 0:
            raise SynthError("noise must be >= 0")
        if not 0 <= self.rewire <= 1:
            raise SynthError("rewire must lie in [0, 1]")
        if len(self.branching) != 2 or min(self.branching) < 1:
            raise SynthError("branching needs one factor >= 1 per class")

    @classmethod
    def full_size(cls, **kw) -> "SynthSpec":
        kw.setdefault("roi_count", 116)
        kw.setdefault("time_points", 150)
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["branching"] = list(self.branching)
        return d


def class_tree(n: int, branching: int) -> np.ndarray:
    """Parent array of the complete ``branching``-ary tree on ``n`` nodes
    (breadth-first numbering, truncated); the root's parent is -1."""
    parent = np.full(n, -1, dtype=np.int64)
    for i in range(1, n):
        parent[i] = (i - 1) // branching
    return parent


def _rewired_adjacency(parent, p, rng) -> np.ndarray:
    n = len(parent)
    A = np.zeros((n, n))
    for i in range(1, n):
        j = parent[i]
        if p > 0 and rng.random() < p:
            j = int(rng.integers(0, i))  # any earlier node keeps the graph a tree
        A[i, j] = A[j, i] = 1.0
    return A


def generate_subject(spec: SynthSpec, label: int, rng: np.random.Generator,
                     subject_id: str = "") -> SubjectTimeSeries:
    """Gaussian time series whose covariance follows the class's latent tree.

    Covariance ``(I - c * D^-1/2 A D^-1/2)^-1`` rescaled to unit diagonal,
    plus white noise of standard deviation ``spec.noise``.
    """
    n, T = spec.roi_count, spec.time_points
    A = _rewired_adjacency(class_tree(n, spec.branching[label]), spec.rewire, rng)
    deg = A.sum(axis=1)
    dinv = 1.0 / np.sqrt(np.maximum(deg, 1.0))
    M = np.eye(n) - spec.coupling * (dinv[:, None] * A * dinv[None, :])
    try:
        np.linalg.cholesky(M)  # positive definite iff coupling < 1
    except np.linalg.LinAlgError:
        raise SynthError(
            f"covariance construction failed for coupling={spec.coupling}; use a smaller value"
        ) from None
    cov = np.linalg.inv(M)
    sd = np.sqrt(np.diag(cov))
    cov = cov / np.outer(sd, sd)
    chol = np.linalg.cholesky(cov)
    x = chol @ rng.standard_normal((n, T))
    x = x + spec.noise * rng.standard_normal((n, T))
    return SubjectTimeSeries(x, subject_id, label)


def generate_dataset(spec: SynthSpec) -> list:
    """Balanced cohort: ``n_subjects`` per class, interleaved by class."""
    root = np.random.SeedSequence(spec.seed)
    children = root.spawn(2 * spec.n_subjects)
    out = []
    for s in range(spec.n_subjects):
        for label in (0, 1):
            idx = 2 * s + label
            rng = np.random.default_rng(children[idx])
            out.append(generate_subject(spec, label, rng, f"sub{idx:04d}"))
    return out


def write_dataset(spec: SynthSpec, out_dir) -> Path:
    """Write one CSV per subject plus ``manifest.txt``; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for ts in generate_dataset(spec):
        p = out_dir / f"{ts.subject_id}.csv"
        save_time_series(ts, p)
        entries.append((p, ts.label))
    manifest = out_dir / "manifest.txt"
    write_manifest(entries, manifest)
    return manifest


# --------------------------------------------------------------------------
# distortion experiment
# --------------------------------------------------------------------------


@dataclass
class DistortionReport:
    geometry: str
    dim: int
    average: float
    worst: float
    final_stress: float
    curvature: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def binary_tree(depth: int, branching: int = 2) -> np.ndarray:
    """Edge list (m, 2) of the complete tree with ``depth`` levels below the root."""
    n = sum(branching**k for k in range(depth + 1))
    parent = class_tree(n, branching)
    return np.array([(int(parent[i]), i) for i in range(1, n)], dtype=np.int64).reshape(-1, 2)


def tree_distances(edges, n: int | None = None) -> np.ndarray:
    """All-pairs hop distances; raises :class:`SynthError` if disconnected."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if n is None:
        n = int(edges.max()) + 1 if len(edges) else 1
    adj = [[] for _ in range(n)]
    for a, b in edges.tolist():
        adj[a].append(b)
        adj[b].append(a)
    dist = np.full((n, n), -1.0)
    for s in range(n):
        dist[s, s] = 0
        frontier = [s]
        while frontier:
            nxt = []
            for u in frontier:
                for w in adj[u]:
                    if dist[s, w] < 0:
                        dist[s, w] = dist[s, u] + 1
                        nxt.append(w)
            frontier = nxt
    if np.any(dist < 0):
        raise SynthError("input graph is disconnected")
    return dist


def _adam(params, grads, state, lr, t, b1=0.9, b2=0.999, eps=1e-8):
    for k, p in params.items():
        g = grads[k]
        m, v = state.setdefault(k, (np.zeros_like(g), np.zeros_like(g)))
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state[k] = (m, v)
        p.data = p.data - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)


def classical_mds(D: np.ndarray, dim: int) -> np.ndarray:
    """Top-``dim`` classical scaling coordinates of a distance matrix."""
    n = D.shape[0]
    J = np.eye(n) - 1.0 / n
    B = -0.5 * J @ (D * D) @ J
    w, V = np.linalg.eigh(B)
    w, V = w[::-1][:dim], V[:, ::-1][:, :dim]
    X = V * np.sqrt(np.maximum(w, 0.0))
    if X.shape[1] < dim:
        X = np.pad(X, ((0, 0), (0, dim - X.shape[1])))
    return X


def _pairwise(coords, geometry, K, iu, ju):
    if geometry == "euclidean":
        diff = ad.gather(coords, iu) - ad.gather(coords, ju)
        return ad.sqrt(ad.clamp(ad.tsum(diff * diff, axis=1), 1e-18))
    pts = lz.expmap0(coords, K)
    return lz.distance(ad.gather(pts, iu), ad.gather(pts, ju), K)


def embed_tree_distortion(edges, geometry="hyperbolic", dim=2, iters=2000, lr=0.05,
                          K=1.0, seed=0) -> DistortionReport:
    """Embed a tree by stress minimisation and report its distortion.

    Hyperbolic positions are ``exp_o`` of optimised origin-tangent
    coordinates; Euclidean positions are the coordinates themselves.  The
    stress ``sum_{i<j} (d_embed - d_graph)^2`` is minimised with Adam using
    tape gradients.  Both geometries start from the same classical-scaling
    layout (plus a small seeded jitter); from a random start the hyperbolic
    stress stalls in tangled local minima.
    """
    if geometry not in ("hyperbolic", "euclidean"):
        raise ValueError("geometry must be 'hyperbolic' or 'euclidean'")
    if dim < 2:
        raise ValueError("dim must be >= 2")
    D = tree_distances(edges)
    n = D.shape[0]
    iu, ju = np.triu_indices(n, 1)
    target = D[iu, ju]
    rng = np.random.default_rng(seed)
    start = classical_mds(D, dim) + rng.normal(0.0, 1e-3, size=(n, dim))
    coords = ad.Tensor(start, requires_grad=True)
    params = {"x": coords}
    state: dict = {}
    stress = float("nan")
    for t in range(1, iters + 1):
        with ad.Tape() as tape:
            de = _pairwise(coords, geometry, K, iu, ju)
            r = de - target
            loss = ad.tsum(r * r)
        grads = tape.backward(loss)
        stress = loss.item()
        _adam(params, {"x": grads[coords]}, state, lr, t)
    de = _pairwise(coords, geometry, K, iu, ju).data
    rel = np.abs(de / target - 1.0)
    return DistortionReport(
        geometry, dim, float(rel.mean()), float(rel.max()), stress,
        K if geometry == "hyperbolic" else None, {"nodes": n, "pairs": len(target)},
    )
