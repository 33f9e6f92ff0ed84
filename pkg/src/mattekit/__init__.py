"""Universal image matting at desk scale: one network, three guidance modes."""

__version__ = "0.1.0"

from . import dataio, guidance, losses, metrics, training  # noqa: F401
from .model import ModelConfig, MattingNetwork, build_model, predict_alpha  # noqa: F401
