from .config import ModelConfig, PRESETS
from .backbone import Backbone, FeaturePack
from .aggregation import (
    ContextAggregationNetwork,
    GlobalObjectAggregator,
    GuidanceEmbedding,
    LocalAppearanceAggregator,
)
from .decoder import Decoder
from .network import MattingNetwork, MattePrediction, build_model, predict_alpha

__all__ = [
    "ModelConfig",
    "PRESETS",
    "Backbone",
    "FeaturePack",
    "GuidanceEmbedding",
    "GlobalObjectAggregator",
    "LocalAppearanceAggregator",
    "ContextAggregationNetwork",
    "Decoder",
    "MattingNetwork",
    "MattePrediction",
    "build_model",
    "predict_alpha",
]
