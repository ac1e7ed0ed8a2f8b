"""Latent dynamics models with a diagonal complex Koopman operator.

The rollout over a horizon is a per-mode causal convolution evaluated with
FFTs; an MLP dynamics baseline with matched parameter count is provided for
comparison, together with simulators, a CEM planner and gradient checks.
"""
from .errors import (
    CacheMismatchError,
    ConfigError,
    DataFormatError,
    KdynError,
    NumericalError,
    ShapeError,
    SizingError,
    TrainingDivergence,
)
from .model import KoopmanModel, LatentModel, MlpBaselineModel, ModelConfig, build_model
from .spectral import ComplexSpectrum, InitScheme, discretize, init_spectrum, vandermonde
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "CacheMismatchError",
    "ComplexSpectrum",
    "ConfigError",
    "DataFormatError",
    "InitScheme",
    "KdynError",
    "KoopmanModel",
    "LatentModel",
    "MlpBaselineModel",
    "ModelConfig",
    "NumericalError",
    "ShapeError",
    "SizingError",
    "TrainConfig",
    "TrainingDivergence",
    "build_model",
    "discretize",
    "init_spectrum",
    "train",
    "vandermonde",
]
