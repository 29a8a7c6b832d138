"""Creativity measures over activation space and raw pixels.

Novelty is distance to the nearest known encoding; value is a deflate
compressibility score; typicality decays with distance from a genre
centroid; dissimilarity is novelty measured against the inspiring set.
All distances live in a named layer's flattened activation space.
"""

from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InputError
from .imageio import to_uint8
from .network import Network, forward_to
from .tensor_core import Tensor

__all__ = [
    "CorpusEncodings",
    "MetricsReport",
    "encode_corpus",
    "novelty",
    "value_compress",
    "typicality_dissimilarity",
    "compute_report",
]

COMPRESS_LEVEL = 6


@dataclass(frozen=True)
class CorpusEncodings:
    layer_name: str
    encodings: list  # of (item_id, 1-d float32 vector)
    source: str  # "training-tiles" or "genre-set"

    def __post_init__(self):
        if not self.encodings:
            raise InputError("corpus encodings must be non-empty")
        length = len(self.encodings[0][1])
        for item_id, vec in self.encodings:
            if len(vec) != length:
                raise InputError(
                    f"encoding '{item_id}' has length {len(vec)}, expected {length}"
                )

    @property
    def matrix(self) -> np.ndarray:
        return np.stack([vec for _, vec in self.encodings])

    @property
    def corpus_id(self) -> str:
        digest = hashlib.sha256()
        for item_id, vec in self.encodings:
            digest.update(item_id.encode())
            digest.update(np.ascontiguousarray(vec, dtype="<f4").tobytes())
        return f"{self.source}:{len(self.encodings)}:{digest.hexdigest()[:12]}"


@dataclass(frozen=True)
class MetricsReport:
    novelty: float
    value_compress: float
    typicality: float
    dissimilarity: float
    layer_name: str
    corpus_ids: dict

    def __post_init__(self):
        if self.novelty < 0 or self.dissimilarity < 0:
            raise InputError("novelty and dissimilarity must be >= 0")
        if not 0.0 <= self.value_compress <= 1.0:
            raise InputError("value_compress must be in [0,1]")
        if not 0.0 < self.typicality <= 1.0:
            raise InputError("typicality must be in (0,1]")

    def as_json(self) -> str:
        return json.dumps(
            {
                "novelty": self.novelty,
                "value_compress": self.value_compress,
                "typicality": self.typicality,
                "dissimilarity": self.dissimilarity,
                "layer_name": self.layer_name,
                "corpus_ids": self.corpus_ids,
            },
            sort_keys=True,
        )


def _encode_flat(net: Network, image: Tensor, layer_name: str) -> np.ndarray:
    return forward_to(net, image, layer_name).activations.array.reshape(-1)


def encode_corpus(net: Network, images, layer_name: str, source: str = "training-tiles") -> CorpusEncodings:
    """Forward every image to the layer and keep the flattened activations.

    images: a sequence of Tensors, or of (item_id, Tensor) pairs.
    """
    if not images:
        raise InputError("cannot encode an empty corpus")
    pairs = []
    for i, item in enumerate(images):
        if isinstance(item, Tensor):
            item_id, img = f"item-{i:04d}", item
        else:
            item_id, img = item
        pairs.append((str(item_id), _encode_flat(net, img, layer_name)))
    return CorpusEncodings(layer_name, pairs, source)


def novelty(net: Network, image: Tensor, corpus: CorpusEncodings, agg: str = "min") -> float:
    """Distance from the image's encoding to the corpus, / sqrt(vector length).

    agg "min" (default) reports the nearest member; "mean" the average
    distance.
    """
    if agg not in ("min", "mean"):
        raise InputError(f"agg must be 'min' or 'mean', got {agg!r}")
    enc = _encode_flat(net, image, corpus.layer_name)
    mat = corpus.matrix
    if mat.shape[1] != enc.shape[0]:
        raise InputError(
            f"corpus vectors have length {mat.shape[1]} but layer "
            f"'{corpus.layer_name}' now encodes to {enc.shape[0]}"
        )
    dists = np.linalg.norm(mat.astype(np.float64) - enc.astype(np.float64), axis=1)
    picked = dists.min() if agg == "min" else dists.mean()
    return float(picked / np.sqrt(enc.shape[0]))


def value_compress(image: Tensor) -> float:
    """1 - deflate ratio of the 8-bit RGB raster; ordered images score high."""
    raw = to_uint8(image).tobytes()
    packed = zlib.compress(raw, COMPRESS_LEVEL)
    return float(np.clip(1.0 - len(packed) / len(raw), 0.0, 1.0))


def typicality_dissimilarity(
    net: Network, image: Tensor, inspiring: CorpusEncodings, genre: CorpusEncodings
) -> tuple:
    """Ritchie-style pair: closeness to a genre, distance from the inputs.

    typicality = exp(-d/sigma) with d the distance to the genre centroid and
    sigma the mean member-to-centroid distance.
    """
    if inspiring.layer_name != genre.layer_name:
        raise InputError(
            f"inspiring set encoded at '{inspiring.layer_name}' but genre at '{genre.layer_name}'"
        )
    if len(genre.encodings) < 2:
        raise InputError("genre corpus needs at least 2 members to define a scale")
    gmat = genre.matrix.astype(np.float64)
    centroid = gmat.mean(axis=0)
    sigma = float(np.linalg.norm(gmat - centroid, axis=1).mean())
    if sigma == 0.0:
        raise InputError("genre members are all identical; typicality scale undefined")
    enc = _encode_flat(net, image, genre.layer_name).astype(np.float64)
    if enc.shape[0] != gmat.shape[1]:
        raise InputError("genre vectors do not match the layer's encoding size")
    d_genre = float(np.linalg.norm(enc - centroid))
    typicality = float(np.exp(-d_genre / sigma))
    dissimilarity = novelty(net, image, inspiring)
    return typicality, dissimilarity


def compute_report(
    net: Network,
    image: Tensor,
    training: CorpusEncodings,
    inspiring: CorpusEncodings,
    genre: CorpusEncodings,
) -> MetricsReport:
    typ, dis = typicality_dissimilarity(net, image, inspiring, genre)
    return MetricsReport(
        novelty=novelty(net, image, training),
        value_compress=value_compress(image),
        typicality=typ,
        dissimilarity=dis,
        layer_name=training.layer_name,
        corpus_ids={
            "training": training.corpus_id,
            "inspiring": inspiring.corpus_id,
            "genre": genre.corpus_id,
        },
    )
