"""Pocket-conditioned ligand generation with a Bayesian flow over coordinates and atom types."""

from .autodiff import DimensionError, GradientError, NumericError, Tensor
from .bfn import NoiseSchedule, sample, schedule_new, train_step
from .config import ConfigError, ModelConfig
from .geometry import Complex
from .model import ModelWeights, backbone_forward

__version__ = "0.1.0"

__all__ = ["Complex", "ConfigError", "DimensionError", "GradientError", "ModelConfig", "ModelWeights",
           "NoiseSchedule", "NumericError", "Tensor", "backbone_forward", "sample", "schedule_new",
           "train_step"]
