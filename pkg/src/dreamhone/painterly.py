"""Stroke-based painterly rendering, alternated with dream passes.

Strokes are anti-aliased capsules oriented along image structure
(perpendicular to the local luminance gradient), colored by sampling the
image under the stroke center, and alpha-composited wide-to-narrow so fine
strokes land on top.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from dataclasses import fields as dataclasses_fields
from typing import Optional, Sequence

import numpy as np

from .errors import InputError
from .network import Network
from .tensor_core import Tensor

__all__ = [
    "StrokeSpec",
    "PaintConfig",
    "paint_config_from_dict",
    "plan_strokes",
    "render_strokes",
    "alternate_passes",
]

FALLBACK_ANGLE = math.pi / 4  # used in fixed mode and where the gradient vanishes
_GRAD_EPS = 1e-6


@dataclass(frozen=True)
class StrokeSpec:
    center: tuple  # (x, y) pixels
    orientation: float  # radians
    length: float
    width: float
    color: tuple  # (r, g, b) in [0,1]
    opacity: float

    def __post_init__(self):
        if not self.length >= self.width >= 1.0:
            raise InputError(
                f"stroke needs length >= width >= 1, got {self.length} x {self.width}"
            )
        if not 0.0 <= self.opacity <= 1.0:
            raise InputError(f"opacity must be in [0,1], got {self.opacity}")


@dataclass(frozen=True)
class PaintConfig:
    stroke_density: float = 60.0  # strokes per 1000 pixels
    length_range: tuple = (8.0, 24.0)
    width_range: tuple = (3.0, 10.0)
    orientation_source: str = "image-gradient"  # or "fixed"
    opacity: float = 0.85
    seed: int = 0

    def __post_init__(self):
        if self.stroke_density <= 0:
            raise InputError(f"stroke_density must be > 0, got {self.stroke_density}")
        for name, rng_ in (("length_range", self.length_range), ("width_range", self.width_range)):
            if len(rng_) != 2 or rng_[0] > rng_[1] or rng_[0] < 1:
                raise InputError(f"{name} must be (min, max) with 1 <= min <= max, got {rng_}")
        if self.orientation_source not in ("image-gradient", "fixed"):
            raise InputError(
                f"orientation_source must be 'image-gradient' or 'fixed', got {self.orientation_source!r}"
            )
        if not 0.0 <= self.opacity <= 1.0:
            raise InputError(f"opacity must be in [0,1], got {self.opacity}")


_PAINT_FIELDS = {f.name for f in dataclasses_fields(PaintConfig)}


def paint_config_from_dict(d: dict) -> PaintConfig:
    unknown = set(d) - _PAINT_FIELDS
    if unknown:
        raise InputError(f"unknown paint config fields {sorted(unknown)}")
    vals = dict(d)
    for key in ("length_range", "width_range"):
        if key in vals:
            vals[key] = tuple(float(v) for v in vals[key])
    return PaintConfig(**vals)


def _luminance(img: np.ndarray) -> np.ndarray:
    return 0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]


def _sobel(lum: np.ndarray) -> tuple:
    padded = np.pad(lum, 1, mode="edge")
    gx = (
        padded[:-2, 2:] + 2 * padded[1:-1, 2:] + padded[2:, 2:]
        - padded[:-2, :-2] - 2 * padded[1:-1, :-2] - padded[2:, :-2]
    )
    gy = (
        padded[2:, :-2] + 2 * padded[2:, 1:-1] + padded[2:, 2:]
        - padded[:-2, :-2] - 2 * padded[:-2, 1:-1] - padded[:-2, 2:]
    )
    return gx, gy


def plan_strokes(image: Tensor, cfg: PaintConfig = PaintConfig()) -> list:
    """Place round(density * H*W/1000) strokes over the image.

    Orientation runs perpendicular to the luminance gradient (along edges);
    color is the pixel under the center. The returned list is ordered widest
    first so rendering in list order layers fine strokes on top.
    """
    arr = image.array
    _, h, w = arr.shape
    count = int(round(cfg.stroke_density * h * w / 1000.0))
    rng = np.random.default_rng(cfg.seed)
    if cfg.orientation_source == "image-gradient":
        gx, gy = _sobel(_luminance(arr))
        mag = np.hypot(gx, gy)
        theta = np.arctan2(gy, gx) + math.pi / 2
    strokes = []
    for _ in range(count):
        x = float(rng.uniform(0, w))
        y = float(rng.uniform(0, h))
        px = min(int(x), w - 1)
        py = min(int(y), h - 1)
        if cfg.orientation_source == "fixed" or mag[py, px] < _GRAD_EPS:
            angle = FALLBACK_ANGLE
        else:
            angle = float(theta[py, px])
        width = float(rng.uniform(*cfg.width_range))
        length = float(rng.uniform(*cfg.length_range))
        length = max(length, width)
        color = tuple(float(v) for v in arr[:, py, px])
        strokes.append(StrokeSpec((x, y), angle, length, width, color, cfg.opacity))
    strokes.sort(key=lambda s: -s.width)
    return strokes


def render_strokes(canvas: Tensor, strokes: Sequence[StrokeSpec]) -> Tensor:
    """Alpha-composite capsules onto a copy of the canvas, in list order."""
    out = canvas.array.astype(np.float32).copy()
    _, h, w = out.shape
    for s in strokes:
        cx, cy = s.center
        half = (s.length - s.width) / 2.0  # segment half-length inside the capsule
        dx, dy = math.cos(s.orientation) * half, math.sin(s.orientation) * half
        ax, ay = cx - dx, cy - dy
        bx, by = cx + dx, cy + dy
        r = s.width / 2.0
        x0 = max(int(math.floor(min(ax, bx) - r - 1)), 0)
        x1 = min(int(math.ceil(max(ax, bx) + r + 1)) + 1, w)
        y0 = max(int(math.floor(min(ay, by) - r - 1)), 0)
        y1 = min(int(math.ceil(max(ay, by) + r + 1)) + 1, h)
        if x0 >= x1 or y0 >= y1:
            continue
        ys, xs = np.mgrid[y0:y1, x0:x1]
        # point-to-segment distance over the stroke's bounding box
        vx, vy = bx - ax, by - ay
        seg2 = vx * vx + vy * vy
        if seg2 < 1e-12:
            dist = np.hypot(xs - ax, ys - ay)
        else:
            t = np.clip(((xs - ax) * vx + (ys - ay) * vy) / seg2, 0.0, 1.0)
            dist = np.hypot(xs - (ax + t * vx), ys - (ay + t * vy))
        coverage = np.clip(r + 0.5 - dist, 0.0, 1.0).astype(np.float32)
        alpha = coverage * s.opacity
        color = np.array(s.color, dtype=np.float32)[:, None, None]
        out[:, y0:y1, x0:x1] = out[:, y0:y1, x0:x1] * (1 - alpha) + color * alpha
    return Tensor.from_array(np.clip(out, 0.0, 1.0))


def alternate_passes(
    net: Network,
    source: Tensor,
    guide: Optional[Tensor],
    schedule,
    paint_cfg: PaintConfig,
    rounds: int,
) -> Tensor:
    """rounds x (dream the image, then paint strokes over the dream output)."""
    from .dream import run_dream

    if rounds < 0:
        raise InputError(f"rounds must be >= 0, got {rounds}")
    img = source
    for _ in range(rounds):
        img, _ = run_dream(net, img, guide, schedule)
        img = render_strokes(img, plan_strokes(img, paint_cfg))
    return img
