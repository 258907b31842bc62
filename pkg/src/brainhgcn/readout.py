"""Graph readout: Frechet mean by Karcher flow, tangent pooling, classifier."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import lorentz as lz
from .autodiff import Tensor, as_tensor

__all__ = [
    "ReadoutConfig",
    "karcher_flow",
    "frechet_objective",
    "tangent_pool",
    "classify",
    "cross_entropy",
    "softmax_probs",
]

INIT_MODES = ("origin", "mean", "first")


@dataclass
class ReadoutConfig:
    karcher_iters: int = 5
    eta: float = 0.1
    init_mode: str = "origin"
    spatial_only: bool = False

    def __post_init__(self):
        if self.karcher_iters < 1:
            raise ValueError("karcher_iters must be >= 1")
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"init_mode must be one of {INIT_MODES}")


def _segments(n, gid, n_graphs):
    if gid is None:
        return np.zeros(n, dtype=np.int64), 1
    return np.asarray(gid, dtype=np.int64), int(n_graphs)


def _segment_mean(x, gid, n_graphs):
    counts = np.bincount(gid, minlength=n_graphs).astype(float)
    return ad.segment_sum(x, gid, n_graphs) / counts[:, None]


def karcher_init(points, K, gid=None, n_graphs=None, mode="mean") -> Tensor:
    points = as_tensor(points)
    gid, G = _segments(points.shape[0], gid, n_graphs)
    if mode == "origin":
        o = lz.origin(K, points.shape[-1] - 1)
        return ad.broadcast_to(ad.reshape(o, (1, -1)), (G, points.shape[-1]))
    if mode == "first":
        first = np.array([np.flatnonzero(gid == g)[0] for g in range(G)])
        return ad.gather(points, first)
    return lz.project(_segment_mean(points, gid, G), K)


def karcher_flow(points, K, iters=5, eta=0.1, gid=None, n_graphs=None, init="mean",
                 history=False):
    """Approximate Frechet mean(s) by ``iters`` damped Karcher steps.

    ``points`` is (N, D); with ``gid``/``n_graphs`` every segment gets its own
    mean and the result is (n_graphs, D), otherwise (D,).  The loop is plain
    tape arithmetic, so gradients flow through the unrolled iterations.
    With ``history=True`` also returns the list of iterates.
    """
    points = as_tensor(points)
    if points.shape[0] == 0:
        raise ValueError("karcher_flow needs at least one point")
    single = gid is None
    gid, G = _segments(points.shape[0], gid, n_graphs)
    mu = karcher_init(points, K, gid, G, init)
    trail = [mu]
    for _ in range(iters):
        logs = lz.logmap(ad.gather(mu, gid), points, K)
        v = _segment_mean(logs, gid, G)
        mu = lz.expmap(mu, eta * v, K)
        trail.append(mu)
    if single:
        mu = mu[0]
        trail = [m[0] for m in trail]
    return (mu, trail) if history else mu


def frechet_objective(points, mu, K) -> float:
    """Mean squared geodesic distance from ``mu`` to ``points``."""
    d = lz.distance(mu, points, K).data
    return float(np.mean(d * d))


def tangent_pool(points, mu, K, gid=None, n_graphs=None) -> Tensor:
    """Average of the log maps of ``points`` at ``mu`` (ambient coordinates)."""
    points = as_tensor(points)
    mu = as_tensor(mu)
    if gid is None:
        return ad.mean(lz.logmap(mu, points, K), axis=0)
    gid, G = _segments(points.shape[0], gid, n_graphs)
    return _segment_mean(lz.logmap(ad.gather(mu, gid), points, K), gid, G)


def classify(z, W, b) -> Tensor:
    """Affine head: ``z @ W.T + b``; ``W`` is (2, D)."""
    return ad.matmul(as_tensor(z), ad.transpose(as_tensor(W))) + b


def cross_entropy(logits, labels) -> Tensor:
    """Per-sample ``-log softmax(logits)[label]`` (log-sum-exp stabilised).

    ``logits`` (2,) with an int label gives a scalar; (G, 2) with a label
    array gives (G,).
    """
    logits = as_tensor(logits)
    single = logits.ndim == 1
    if single:
        logits = ad.reshape(logits, (1, -1))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if np.any((labels < 0) | (labels >= logits.shape[1])):
        raise ValueError("label out of range")
    shift = Tensor(logits.data.max(axis=1, keepdims=True))
    z = logits - shift
    lse = ad.log(ad.tsum(ad.exp(z), axis=1))
    picked = ad.getitem(z, (np.arange(len(labels)), labels))
    loss = lse - picked
    return loss[0] if single else loss


def softmax_probs(logits) -> np.ndarray:
    x = np.asarray(logits.data if isinstance(logits, Tensor) else logits, dtype=float)
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=-1, keepdims=True)
