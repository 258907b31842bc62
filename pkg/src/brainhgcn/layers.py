"""Hyperbolic attention layers with signed aggregation.

The per-node functions (``hyperbolic_linear``, ``attention_scores``,
``signed_softmax``, ``signed_aggregate``, ``layer_update``) follow the layer
definition one step at a time and double as the reference for
:func:`forward_layer`, which evaluates a whole batch of graphs at once over
an :class:`EdgeIndex`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import lorentz as lz
from .autodiff import Tensor, as_tensor

__all__ = [
    "LayerConfig",
    "LayerParams",
    "EdgeIndex",
    "curvature",
    "rho_for_curvature",
    "lift_to_manifold",
    "hyperbolic_linear",
    "attention_scores",
    "signed_softmax",
    "signed_aggregate",
    "layer_update",
    "forward_layer",
]

CURVATURE_FLOOR = 1e-4
ACTIVATIONS = ("relu", "identity")


@dataclass
class LayerConfig:
    d: int = 64
    heads: int = 4
    tau0: float = 1.0
    activation: str = "relu"
    euclidean_attention: bool = False
    unsigned_aggregation: bool = False
    euclidean_geometry: bool = False

    def __post_init__(self):
        if self.d < 1 or self.heads < 1:
            raise ValueError("d and heads must be >= 1")
        if not self.tau0 > 0:
            raise ValueError("tau0 must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")


@dataclass
class LayerParams:
    W: Tensor  # (d_out, d_in)
    b: Tensor  # (d_out,)
    Wq: Tensor  # (H, d_out, d_out)
    Wk: Tensor
    Wv: Tensor
    rho: Tensor  # () raw curvature of this layer's output

    def tensors(self) -> dict:
        return {"W": self.W, "b": self.b, "Wq": self.Wq, "Wk": self.Wk, "Wv": self.Wv, "rho": self.rho}


def curvature(rho) -> Tensor:
    """``K = softplus(rho) + 1e-4`` (always positive)."""
    return ad.softplus(rho) + CURVATURE_FLOOR


def rho_for_curvature(K: float) -> float:
    return math.log(math.expm1(K - CURVATURE_FLOOR))


def _activate(u, name):
    return ad.relu(u) if name == "relu" else u


class EdgeIndex:
    """Directed message edges of a (batched) signed graph.

    Edge ``e`` carries a message from node ``col[e]`` to node ``row[e]`` with
    sign ``sign[e]``.  Softmax buckets are ``seg[e]``; with signed
    aggregation they are ``2*row + (sign < 0)`` so the two neighbourhoods are
    normalised separately.  Edges are sorted by (bucket, col).
    """

    def __init__(self, row, col, sign, n_nodes, unsigned=False):
        row = np.asarray(row, dtype=np.int64)
        col = np.asarray(col, dtype=np.int64)
        sign = np.asarray(sign, dtype=np.float64)
        if unsigned:
            seg = row.copy()
            n_seg = n_nodes
        else:
            seg = 2 * row + (sign < 0)
            n_seg = 2 * n_nodes
        order = np.lexsort((col, seg))
        self.row = row[order]
        self.col = col[order]
        # unsigned aggregation treats every neighbour as excitatory
        self.sign = np.ones_like(sign[order]) if unsigned else sign[order]
        self.seg = seg[order]
        self.n_seg = n_seg
        self.n_nodes = n_nodes

    def __len__(self):
        return len(self.row)

    @classmethod
    def from_graphs(cls, graphs, self_loops=True, unsigned=False):
        rows, cols, signs = [], [], []
        off = 0
        for g in graphs:
            for pairs, s in ((g.pos, 1.0), (g.neg, -1.0)):
                if len(pairs):
                    i, j = pairs[:, 0] + off, pairs[:, 1] + off
                    rows += [i, j]
                    cols += [j, i]
                    signs += [np.full(2 * len(pairs), s)]
            if self_loops:
                idx = np.arange(g.n) + off
                rows.append(idx)
                cols.append(idx)
                signs.append(np.ones(g.n))
            off += g.n
        cat = lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dt)
        return cls(cat(rows, np.int64), cat(cols, np.int64), cat(signs, np.float64), off, unsigned)


# --------------------------------------------------------------------------
# per-node building blocks
# --------------------------------------------------------------------------


def lift_to_manifold(x, K0) -> Tensor:
    """Exponential map at the origin of ``(0, x)``."""
    return lz.expmap0(x, K0)


def hyperbolic_linear(x, W, b, K) -> Tensor:
    """``exp_o(W log_o(x))`` followed by the bias, transported from the origin.

    ``W`` acts on spatial coordinates; ``b`` is the spatial part of a tangent
    vector at the origin (``None`` for no bias).
    """
    u = lz.logmap0(x, K)
    y = lz.expmap0(ad.matmul(u, ad.transpose(as_tensor(W))), K)
    if b is None:
        return y
    bt = lz.transport0(y, ad.broadcast_to(as_tensor(b), y.shape[:-1] + (y.shape[-1] - 1,)), K)
    return lz.expmap(y, bt, K)


def attention_scores(q, k, d: int, tau0: float, K) -> Tensor:
    """``<q, k>_L / (sqrt(d) * tau)`` with ``tau = tau0 / sqrt(K)``."""
    tau = tau0 / ad.sqrt(as_tensor(K))
    return lz.inner(q, k) / (math.sqrt(d) * tau)


def signed_softmax(scores, pos, neg):
    """Softmax of ``scores`` restricted to ``pos`` and to ``neg`` separately.

    Returns ``(w_pos, w_neg)`` aligned with the index lists; an empty list
    yields an empty weight vector.
    """
    scores = as_tensor(scores)
    pos = np.asarray(pos, dtype=np.int64)
    neg = np.asarray(neg, dtype=np.int64)
    if np.intersect1d(pos, neg).size:
        raise ValueError("positive and negative neighbourhoods must be disjoint")
    out = []
    for idx in (pos, neg):
        if len(idx) == 0:
            out.append(Tensor(np.zeros((0,) + scores.shape[1:])))
        else:
            s = ad.gather(scores, idx)
            out.append(ad.segment_softmax(s, np.zeros(len(idx), dtype=np.int64), 1))
    return out[0], out[1]


def signed_aggregate(h, values, w_pos, w_neg, pos, neg, K) -> Tensor:
    """Pull towards positive neighbours, push from negative ones, at ``h``.

    ``h`` is (D,); ``values`` is (H, J, D) indexed by neighbour; ``w_pos`` /
    ``w_neg`` are (len(pos), H) / (len(neg), H).  Head updates are averaged in
    the tangent space of ``h`` and mapped back with the exponential map.
    """
    h = as_tensor(h)
    values = as_tensor(values)
    H = values.shape[0]
    total = None
    for idx, w, s in ((pos, w_pos, 1.0), (neg, w_neg, -1.0)):
        idx = np.asarray(idx, dtype=np.int64)
        if len(idx) == 0:
            continue
        v = ad.transpose(ad.gather(ad.transpose(values, (1, 0, 2)), idx), (1, 0, 2))  # (H, J, D)
        logs = lz.logmap(h, v, K)
        part = ad.tsum(ad.transpose(as_tensor(w))[..., None] * logs, axis=1)  # (H, D)
        part = part if s > 0 else -part
        total = part if total is None else total + part
    if total is None:
        return lz.project(h, K)
    delta = lz.project_tangent(h, ad.tsum(total, axis=0) / H, K)
    return lz.expmap(h, delta, K)


def layer_update(y, K_prev, K_next, activation="relu") -> Tensor:
    """Nonlinearity in the origin tangent space, re-mapped under ``K_next``."""
    return lz.expmap0(_activate(lz.logmap0(y, K_prev), activation), K_next)


# --------------------------------------------------------------------------
# batched layer
# --------------------------------------------------------------------------


def _heads(W, u):
    # W (H, e, d), u (N, d) -> (N, H, e) as a single (N, d) @ (d, H*e) product
    H, e, d = W.shape
    Wt = ad.reshape(ad.transpose(W, (2, 0, 1)), (d, H * e))
    return ad.reshape(ad.matmul(u, Wt), (u.shape[0], H, e))


def forward_layer(x, edges: EdgeIndex, p: LayerParams, cfg: LayerConfig, K_prev, K_next) -> Tensor:
    """One attention layer for every node of a (batched) graph.

    ``x``: (N, d_in + 1) points on H_{K_prev} (or (N, d_in) Euclidean vectors
    when ``cfg.euclidean_geometry``).  Returns (N, d + 1) points on H_{K_next}.
    """
    if cfg.euclidean_geometry:
        return _forward_layer_euclidean(x, edges, p, cfg)
    N = x.shape[0]
    d = p.W.shape[0]
    D = d + 1
    h = hyperbolic_linear(x, p.W, p.b, K_prev)  # (N, D)
    uh = lz.logmap0(h, K_prev)
    uq, uk, uv = _heads(p.Wq, uh), _heads(p.Wk, uh), _heads(p.Wv, uh)
    v = lz.expmap0(uv, K_prev)  # (N, H, D)
    row, col = edges.row, edges.col
    if cfg.euclidean_attention:
        scores = ad.edge_inner(uq, uk, row, col, np.ones(d)) / (math.sqrt(d) * cfg.tau0)
    else:
        q, k = lz.expmap0(uq, K_prev), lz.expmap0(uk, K_prev)
        ip = ad.edge_inner(q, k, row, col, lz._signature(D))
        scores = ip * (ad.sqrt(K_prev) / (math.sqrt(d) * cfg.tau0))
    w = ad.segment_softmax(scores, edges.seg, edges.n_seg)  # (E, H)

    # sum_j c_j log_h(v_j) with log_h(v) = f(a) (v + (<h,v>/K) h), a = -<h,v>/K
    ip = ad.edge_inner(ad.reshape(h, (N, 1, D)), v, row, col, lz._signature(D))
    ipk = ip / K_prev
    a = ad.clamp(-ipk, lz.ACOSH_FLOOR)
    f = ad.arcosh(a) / ad.sqrt((a - 1.0) * (a + 1.0))
    c = w * f * edges.sign[:, None]
    pull = ad.edge_scatter(c, v, row, col, N)  # (N, H, D)
    along = ad.segment_sum(c * ipk, row, N)  # (N, H)
    delta = ad.mean(pull, axis=1) + ad.mean(along, axis=1, keepdims=True) * h
    delta = lz.project_tangent(h, delta, K_prev)
    y = lz.expmap(h, delta, K_prev)
    return layer_update(y, K_prev, K_next, cfg.activation)


def _forward_layer_euclidean(x, edges, p, cfg):
    N = x.shape[0]
    d = p.W.shape[0]
    h = ad.matmul(x, ad.transpose(p.W)) + p.b  # (N, d)
    uq, uk, v = _heads(p.Wq, h), _heads(p.Wk, h), _heads(p.Wv, h)
    row, col = edges.row, edges.col
    scores = ad.edge_inner(uq, uk, row, col, np.ones(d)) / (math.sqrt(d) * cfg.tau0)
    w = ad.segment_softmax(scores, edges.seg, edges.n_seg)
    c = w * edges.sign[:, None]
    pull = ad.edge_scatter(c, v, row, col, N)
    along = ad.segment_sum(c, row, N)
    delta = ad.mean(pull, axis=1) - ad.mean(along, axis=1, keepdims=True) * h
    return _activate(h + delta, cfg.activation)
