"""
Numerical substrate: tensors with reverse-mode gradients, NN functions,
seeded random streams, parameter containers and optimizers.
"""

from .errors import (
    ConfigError,
    CoverageError,
    DataError,
    DimensionError,
    MoESearchError,
    NumericAbort,
    ParameterError,
    SpecError,
)
from .module import Module
from .optim import SGD, Adam, Lamb, Optimizer, clip_grad_norm, create_optimizer
from .rng import RngStream, RngStreams, StreamId
from .tensor import Tensor, as_tensor, no_grad, parameter

__all__ = [
    "SGD",
    "Adam",
    "ConfigError",
    "CoverageError",
    "DataError",
    "DimensionError",
    "Lamb",
    "MoESearchError",
    "Module",
    "NumericAbort",
    "Optimizer",
    "ParameterError",
    "RngStream",
    "RngStreams",
    "SpecError",
    "StreamId",
    "Tensor",
    "as_tensor",
    "clip_grad_norm",
    "create_optimizer",
    "no_grad",
    "parameter",
]
