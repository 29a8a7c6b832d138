"""Guided-dream generative art engine.

Feature-guided image hallucination on a small from-scratch convnet, with
style-tile corpus building, in-loop classifier honing, painterly strokes,
creativity metrics, and a live-steerable HTTP service.
"""

__version__ = "0.1.0"

from .errors import (
    CheckpointFormatError,
    CheckpointVersionError,
    DreamhoneError,
    InputError,
    ShapeError,
    UnknownLayerError,
)
from .tensor_core import Tensor

__all__ = [
    "Tensor",
    "DreamhoneError",
    "ShapeError",
    "InputError",
    "UnknownLayerError",
    "CheckpointFormatError",
    "CheckpointVersionError",
    "__version__",
]
