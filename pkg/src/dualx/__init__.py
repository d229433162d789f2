"""Dual axial spatial x temporal transformer for real-world video super-resolution, at desk scale."""

__version__ = "0.1.0"

from .errors import (DualXError, InvalidConfigError, InvalidScaleError, InvalidShapeError, NonFiniteError,
                     TrainingDivergedError, UnsupportedFormatError)
from .model import DualXModel, ModelConfig, forward, init_params, preset
from .tensor import Rng, Tape, Tensor, precision

__all__ = [
    "DualXError", "InvalidConfigError", "InvalidScaleError", "InvalidShapeError", "NonFiniteError",
    "TrainingDivergedError", "UnsupportedFormatError", "DualXModel", "ModelConfig", "forward", "init_params",
    "preset", "Rng", "Tape", "Tensor", "precision", "__version__",
]
