"""Knowledge-augmented spatiotemporal graph convolutional forecasting of road speeds."""

from .graph import RoadGraph, build_graph, gcn_layer, propagation_matrix
from .gru import GruParams, SpeedTensor
from .kscell import KsCellParams
from .metrics import MetricReport, evaluate
from .model import ForecastModel, ModelConfig
from .trainer import ForecastData, TrainConfig, finite_diff_check, train

__all__ = ["RoadGraph", "build_graph", "gcn_layer", "propagation_matrix", "GruParams", "SpeedTensor",
           "KsCellParams", "MetricReport", "evaluate", "ForecastModel", "ModelConfig", "ForecastData",
           "TrainConfig", "finite_diff_check", "train"]
