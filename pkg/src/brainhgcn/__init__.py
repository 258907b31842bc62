"""Lorentz-model hyperbolic graph attention for signed brain connectivity graphs."""

from .autodiff import Tape, Tensor
from .graph import SignedGraph, SubjectTimeSeries, build_signed_graph, graph_from_series
from .model import ModelConfig, forward, init_params
from .synth import SynthSpec
from .train import TrainConfig, compute_metrics

__version__ = "0.1.0"

__all__ = [
    "Tape",
    "Tensor",
    "SignedGraph",
    "SubjectTimeSeries",
    "build_signed_graph",
    "graph_from_series",
    "ModelConfig",
    "forward",
    "init_params",
    "SynthSpec",
    "TrainConfig",
    "compute_metrics",
]
