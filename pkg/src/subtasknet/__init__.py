"""Sub-task segmentation of demonstration videos and primitive execution."""

from .errors import (
    ConfigError,
    DimensionError,
    FormatError,
    NumericalError,
    ParameterError,
    SubtaskNetError,
    UsageError,
)
from .model import ModelConfig, SegmentationModel

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DimensionError",
    "FormatError",
    "ModelConfig",
    "NumericalError",
    "ParameterError",
    "SegmentationModel",
    "SubtaskNetError",
    "UsageError",
]
