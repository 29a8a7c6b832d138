"""Hierarchical stochastic tiling of labeled source artworks.

Each source image is cut into many square tiles whose sides are drawn from
per-level size bands (halving per level), giving a training corpus far
larger than the image count. Randomness is derived per image from
(seed, source_id), so tiling order never matters.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import InputError
from .imageio import load_image
from .tensor_core import Tensor

__all__ = [
    "TileRecord",
    "TilingConfig",
    "Manifest",
    "stochastic_tile",
    "extract_tile",
    "build_manifest",
    "save_manifest",
    "load_manifest",
    "manifest_digest",
    "load_dataset",
]

MANIFEST_VERSION = 1


@dataclass(frozen=True)
class TileRecord:
    source_id: str  # "category/filename"
    x: int
    y: int
    w: int
    h: int
    level: int
    category: str


@dataclass(frozen=True)
class TilingConfig:
    tiles_per_level: tuple = (4, 10, 40)
    min_tile: int = 16
    tile_out_size: tuple = (64, 64)

    @property
    def levels(self) -> int:
        return len(self.tiles_per_level)


@dataclass
class Manifest:
    categories: list
    records: list
    tile_out_size: tuple
    seed: int
    root: Optional[Path] = field(default=None, compare=False)


def _image_seed(seed: int, source_id: str) -> int:
    digest = hashlib.sha256(f"{seed}:{source_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def stochastic_tile(
    image_dims: tuple,
    levels: int = 3,
    tiles_per_level: Sequence[int] = (4, 10, 40),
    min_tile: int = 16,
    seed: int = 0,
) -> list:
    """Random square rects (x, y, w, h, level) covering a size hierarchy.

    Level l draws sides uniformly from [image_min/2^(l+1), image_min/2^l],
    clamped to at least min_tile; positions are uniform within bounds.
    """
    h, w = image_dims[-2], image_dims[-1]
    image_min = min(h, w)
    if levels < 1:
        raise InputError(f"levels must be >= 1, got {levels}")
    if len(tiles_per_level) != levels:
        raise InputError(
            f"tiles_per_level has {len(tiles_per_level)} entries for {levels} levels"
        )
    if min_tile < 1 or min_tile > image_min:
        raise InputError(f"min_tile {min_tile} exceeds image min dimension {image_min}")
    rng = np.random.default_rng(seed)
    rects = []
    for level in range(levels):
        lo = max(min_tile, image_min // (2 ** (level + 1)))
        hi = max(lo, image_min // (2**level))
        for _ in range(int(tiles_per_level[level])):
            side = int(rng.integers(lo, hi + 1))
            x = int(rng.integers(0, w - side + 1))
            y = int(rng.integers(0, h - side + 1))
            rects.append((x, y, side, side, level))
    return rects


def _resample_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bilinear resize with half-pixel-aligned sample centers."""
    c, h, w = img.shape
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[None, :, None]
    wx = (xs - x0)[None, None, :]
    top = img[:, y0][:, :, x0] * (1 - wx) + img[:, y0][:, :, x1] * wx
    bot = img[:, y1][:, :, x0] * (1 - wx) + img[:, y1][:, :, x1] * wx
    out = top * (1 - wy) + bot * wy
    return out.astype(img.dtype, copy=False)


def extract_tile(image: Tensor, rect, out_size) -> Tensor:
    """Crop rect = (x, y, w, h) and bilinearly resample to out_size (H, W)."""
    x, y, w, h = (int(v) for v in rect[:4])
    c, ih, iw = image.dims
    if w < 1 or h < 1 or x < 0 or y < 0 or x + w > iw or y + h > ih:
        raise InputError(f"rect {(x, y, w, h)} outside image bounds {ih}x{iw}")
    crop = image.array[:, y : y + h, x : x + w]
    oh, ow = int(out_size[0]), int(out_size[1])
    if (h, w) == (oh, ow):
        return Tensor.from_array(crop.copy())
    return Tensor.from_array(_resample_bilinear(crop, oh, ow))


def build_manifest(corpus_dir, config: TilingConfig = TilingConfig(), seed: int = 0) -> Manifest:
    """Tile every PNG under corpus_dir/<category>/ into labeled records."""
    root = Path(corpus_dir)
    if not root.is_dir():
        raise InputError(f"corpus directory {root} does not exist")
    cat_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not cat_dirs:
        raise InputError(f"corpus directory {root} contains no category subdirectories")
    categories = [p.name for p in cat_dirs]
    records = []
    for cat_dir in cat_dirs:
        images = sorted(cat_dir.glob("*.png"))
        if not images:
            raise InputError(f"category '{cat_dir.name}' contains no .png images")
        for img_path in images:
            source_id = f"{cat_dir.name}/{img_path.name}"
            img = load_image(img_path)
            rects = stochastic_tile(
                img.dims[1:],
                levels=config.levels,
                tiles_per_level=config.tiles_per_level,
                min_tile=config.min_tile,
                seed=_image_seed(seed, source_id),
            )
            for x, y, w, h, level in rects:
                records.append(TileRecord(source_id, x, y, w, h, level, cat_dir.name))
    return Manifest(
        categories=categories,
        records=records,
        tile_out_size=tuple(config.tile_out_size),
        seed=seed,
        root=root,
    )


def _manifest_lines(manifest: Manifest) -> list:
    header = {
        "version": MANIFEST_VERSION,
        "categories": list(manifest.categories),
        "tile_out_size": list(manifest.tile_out_size),
        "seed": manifest.seed,
    }
    lines = [json.dumps(header, sort_keys=True, separators=(",", ":"))]
    for r in manifest.records:
        rec = {
            "source_id": r.source_id,
            "x": r.x,
            "y": r.y,
            "w": r.w,
            "h": r.h,
            "level": r.level,
            "category": r.category,
        }
        lines.append(json.dumps(rec, sort_keys=True, separators=(",", ":")))
    return lines


def save_manifest(manifest: Manifest, path) -> None:
    Path(path).write_text("\n".join(_manifest_lines(manifest)) + "\n")


def load_manifest(path, root=None) -> Manifest:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise InputError(f"manifest {path} is empty")
    header = json.loads(lines[0])
    version = header.get("version")
    if version != MANIFEST_VERSION:
        raise InputError(f"unsupported manifest version {version}")
    records = []
    for line in lines[1:]:
        if not line.strip():
            continue
        d = json.loads(line)
        records.append(
            TileRecord(d["source_id"], d["x"], d["y"], d["w"], d["h"], d["level"], d["category"])
        )
    return Manifest(
        categories=list(header["categories"]),
        records=records,
        tile_out_size=tuple(header["tile_out_size"]),
        seed=header["seed"],
        root=Path(root) if root is not None else Path(path).parent,
    )


def manifest_digest(manifest: Manifest) -> str:
    """Stable identifier for the corpus this manifest describes."""
    payload = ("\n".join(_manifest_lines(manifest)) + "\n").encode()
    return hashlib.sha256(payload).hexdigest()


def load_dataset(manifest: Manifest) -> tuple:
    """Materialize (X [N,C,H,W] float32, y [N] labels) in record order."""
    if not manifest.records:
        raise InputError("manifest has no tile records")
    if manifest.root is None:
        raise InputError("manifest has no source root directory")
    cat_index = {c: i for i, c in enumerate(manifest.categories)}
    cache = {}
    xs = np.empty(
        (len(manifest.records), 3, manifest.tile_out_size[0], manifest.tile_out_size[1]),
        dtype=np.float32,
    )
    ys = np.empty(len(manifest.records), dtype=np.int64)
    for i, r in enumerate(manifest.records):
        if r.category not in cat_index:
            raise InputError(f"record category '{r.category}' not in manifest categories")
        if r.source_id not in cache:
            cache[r.source_id] = load_image(Path(manifest.root) / r.source_id)
        tile = extract_tile(cache[r.source_id], (r.x, r.y, r.w, r.h), manifest.tile_out_size)
        xs[i] = tile.array
        ys[i] = cat_index[r.category]
    return xs, ys
