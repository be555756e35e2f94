from . import autodiff as ad
from .autodiff import Tensor
from .params import (
    ConfigurationError,
    GradientCheckError,
    OptimizerState,
    ParameterStore,
    adam_step,
    grad_check,
)
from .rng import RandomStream
from .serialize import CheckpointFormatError, read_arrays, write_arrays

__all__ = [
    "ad",
    "Tensor",
    "ConfigurationError",
    "GradientCheckError",
    "OptimizerState",
    "ParameterStore",
    "adam_step",
    "grad_check",
    "RandomStream",
    "CheckpointFormatError",
    "read_arrays",
    "write_arrays",
]
