"""Tilted sharpness-aware minimization: objectives, samplers, optimizers and analysis."""

from .landscapes import (
    Constant,
    GlmLandscape,
    Linear,
    LogisticRegression,
    MlpLandscape,
    Quadratic,
    ToyPiecewise1D,
    ToySine1D,
    fd_grad,
)
from .measures import PerturbationMeasure
from .optim import TrainConfig, TrajectoryRecord, train
from .samplers import PerturbationBatch, SamplerConfig
from .tilt import TiltConfig, log_mean_exp, tilted_gradient, tilted_weights

__version__ = "0.1.0"
