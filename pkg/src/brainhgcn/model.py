"""Full Brain-HGCN assembly: lifting, attention layers, readout, classifier.

Graphs in a batch are evaluated together as one disjoint union; only the
readout needs graph membership.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import autodiff as ad
from . import lorentz as lz
from . import readout as ro
from .autodiff import Tensor
from .layers import EdgeIndex, LayerConfig, LayerParams, curvature, forward_layer, rho_for_curvature

__all__ = [
    "ABLATIONS",
    "ModelConfig",
    "Batch",
    "apply_ablation",
    "init_params",
    "layer_params",
    "forward",
    "batch_loss",
    "predict_proba",
]

ABLATIONS = (
    "euclidean_geometry",
    "fixed_base_readout",
    "euclidean_attention",
    "unsigned_aggregation",
)


@dataclass(frozen=True)
class ModelConfig:
    in_dim: int
    hidden: int = 64
    layers: int = 3
    heads: int = 4
    tau0: float = 1.0
    activation: str = "relu"
    self_loops: bool = True
    init_curvature: float = 1.0
    karcher_iters: int = 5
    eta: float = 0.1
    karcher_init: str = "origin"  # the mean start leaves z a vanishing residual
    readout_spatial_only: bool = False
    euclidean_geometry: bool = False
    fixed_base_readout: bool = False
    euclidean_attention: bool = False
    unsigned_aggregation: bool = False

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        LayerConfig(self.hidden, self.heads, self.tau0, self.activation)
        ro.ReadoutConfig(self.karcher_iters, self.eta, self.karcher_init)
        if self.euclidean_geometry and any(
            getattr(self, f) for f in ABLATIONS if f != "euclidean_geometry"
        ):
            raise ValueError("euclidean_geometry subsumes the other ablation flags")

    @property
    def layer_config(self) -> LayerConfig:
        return LayerConfig(
            self.hidden, self.heads, self.tau0, self.activation,
            self.euclidean_attention, self.unsigned_aggregation, self.euclidean_geometry,
        )

    @property
    def ablations(self) -> list:
        return [f for f in ABLATIONS if getattr(self, f)]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def apply_ablation(flags, config: ModelConfig) -> ModelConfig:
    """Return ``config`` with the named ablation flags switched on."""
    flags = list(flags or [])
    unknown = [f for f in flags if f not in ABLATIONS]
    if unknown:
        raise ValueError(f"unknown ablation flag(s): {', '.join(unknown)}")
    return replace(config, **{f: True for f in flags})


def _normal(rng, shape, std):
    return rng.normal(0.0, std, size=shape)


def init_params(config: ModelConfig, rng: np.random.Generator) -> dict:
    """Fresh parameter dict (name -> Tensor, insertion order is canonical)."""
    d, H = config.hidden, config.heads
    rho = rho_for_curvature(config.init_curvature)
    params = {"rho0": np.array(rho)}
    d_in = config.in_dim
    for layer in range(config.layers):
        pre = f"layer{layer}."
        params[pre + "W"] = _normal(rng, (d, d_in), 1.0 / math.sqrt(d_in))
        params[pre + "b"] = np.zeros(d)
        for m in ("Wq", "Wk", "Wv"):
            params[pre + m] = _normal(rng, (H, d, d), 1.0 / math.sqrt(d))
        params[pre + "rho"] = np.array(rho)
        d_in = d
    width = d if (config.euclidean_geometry or config.readout_spatial_only) else d + 1
    params["cls.W"] = _normal(rng, (2, width), 1.0 / math.sqrt(width))
    params["cls.b"] = np.zeros(2)
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in params.items()}


def layer_params(params: dict, layer: int) -> LayerParams:
    pre = f"layer{layer}."
    return LayerParams(*(params[pre + n] for n in ("W", "b", "Wq", "Wk", "Wv", "rho")))


class Batch:
    """Disjoint union of graphs: stacked features, graph ids, message edges."""

    def __init__(self, graphs, config: ModelConfig):
        self.graphs = list(graphs)
        if not self.graphs:
            raise ValueError("empty batch")
        self.features = np.concatenate([g.features for g in self.graphs], axis=0)
        if self.features.shape[1] != config.in_dim:
            raise ValueError(
                f"feature length {self.features.shape[1]} != model in_dim {config.in_dim}"
            )
        self.n_graphs = len(self.graphs)
        self.gid = np.repeat(np.arange(self.n_graphs), [g.n for g in self.graphs])
        self.labels = np.array([-1 if g.label is None else g.label for g in self.graphs])
        self.edges = EdgeIndex.from_graphs(
            self.graphs, self_loops=config.self_loops, unsigned=config.unsigned_aggregation
        )


def node_embeddings(params: dict, batch: Batch, config: ModelConfig):
    """Final node representations and the readout curvature."""
    lcfg = config.layer_config
    x = Tensor(batch.features)
    if config.euclidean_geometry:
        for layer in range(config.layers):
            x = forward_layer(x, batch.edges, layer_params(params, layer), lcfg, None, None)
        return x, None
    K = curvature(params["rho0"])
    x = lz.expmap0(x, K)
    for layer in range(config.layers):
        p = layer_params(params, layer)
        K_next = curvature(p.rho)
        x = forward_layer(x, batch.edges, p, lcfg, K, K_next)
        K = K_next
    return x, K


def graph_readout(x, K, batch: Batch, config: ModelConfig) -> Tensor:
    """Pooled graph vectors (G, width)."""
    G, gid = batch.n_graphs, batch.gid
    counts = np.bincount(gid, minlength=G).astype(float)[:, None]
    if config.euclidean_geometry:
        return ad.segment_sum(x, gid, G) / counts
    if config.fixed_base_readout:
        u = lz.logmap0(x, K)
        z = ad.concat([Tensor(np.zeros((x.shape[0], 1))), u], axis=1)
        z = ad.segment_sum(z, gid, G) / counts
    else:
        mu = ro.karcher_flow(x, K, config.karcher_iters, config.eta, gid, G, config.karcher_init)
        z = ro.tangent_pool(x, mu, K, gid, G)
    if config.readout_spatial_only:
        z = z[:, 1:]
    return z


def forward(params: dict, batch: Batch, config: ModelConfig) -> Tensor:
    """Logits (G, 2) for every graph in the batch."""
    x, K = node_embeddings(params, batch, config)
    z = graph_readout(x, K, batch, config)
    return ro.classify(z, params["cls.W"], params["cls.b"])


def batch_loss(params: dict, batch: Batch, config: ModelConfig) -> Tensor:
    """Mean cross-entropy over the graphs of the batch."""
    return ad.mean(ro.cross_entropy(forward(params, batch, config), batch.labels))


def predict_proba(params: dict, graphs, config: ModelConfig, batch_size: int = 64) -> np.ndarray:
    """Positive-class probability per graph (no tape)."""
    out = []
    for s in range(0, len(graphs), batch_size):
        logits = forward(params, Batch(graphs[s:s + batch_size], config), config)
        out.append(ro.softmax_probs(logits)[:, 1])
    return np.concatenate(out) if out else np.zeros(0)
