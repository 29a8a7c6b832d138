"""PNG ingestion and emission.

Images cross this boundary as 8-bit RGB; inside the engine they are
float32 [C,H,W] tensors in [0,1]. Encoding is deterministic: the same
tensor always produces the same bytes.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InputError
from .tensor_core import Tensor

__all__ = ["load_image", "save_image", "png_bytes", "image_from_bytes", "to_uint8", "from_uint8"]


def from_uint8(arr: np.ndarray) -> Tensor:
    """HWC uint8 -> [C,H,W] float32 in [0,1]."""
    return Tensor.from_array(arr.astype(np.float32).transpose(2, 0, 1) / 255.0)


def to_uint8(t: Tensor) -> np.ndarray:
    """[C,H,W] in [0,1] -> HWC uint8, clamping out-of-range values."""
    arr = np.clip(t.array, 0.0, 1.0)
    return (arr * 255.0 + 0.5).astype(np.uint8).transpose(1, 2, 0)


def load_image(path) -> Tensor:
    path = Path(path)
    try:
        with Image.open(path) as im:
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.uint8)
    except (OSError, ValueError) as e:
        raise InputError(f"cannot read image {path}: {e}") from e
    return from_uint8(arr)


def image_from_bytes(data: bytes) -> Tensor:
    try:
        with Image.open(io.BytesIO(data)) as im:
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.uint8)
    except (OSError, ValueError) as e:
        raise InputError(f"cannot decode image bytes: {e}") from e
    return from_uint8(arr)


def png_bytes(t: Tensor) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(to_uint8(t), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def save_image(t: Tensor, path) -> None:
    Path(path).write_bytes(png_bytes(t))
