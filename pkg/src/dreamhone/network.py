"""Named-layer networks: forward encoding, classifier training, checkpoints.

A Network is an immutable ordered list of named layer specs whose shape
compatibility is proven at construction. Training returns a new Network;
the old one is untouched and stays safe to use concurrently.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    CheckpointFormatError,
    CheckpointVersionError,
    InputError,
    ShapeError,
    UnknownLayerError,
)
from .tensor_core import (
    ConvParams,
    DenseParams,
    LayerOp,
    PoolParams,
    Relu,
    Tensor,
    conv_param_grads_batch,
    dense_param_grads_batch,
    forward_op_batch,
    input_grad_op_batch,
    output_dims,
)
from .tiling import Manifest, load_dataset, manifest_digest

__all__ = [
    "LayerSpec",
    "Network",
    "FeatureEncoding",
    "build_reference_net",
    "forward_to",
    "forward_logits_batch",
    "train_classifier",
    "sgd_step",
    "evaluate_accuracy",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_roundtrip",
    "holdout_split",
]

CHECKPOINT_MAGIC = b"DHNET"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv | relu | maxpool | dense
    name: str
    params: LayerOp


@dataclass(frozen=True)
class FeatureEncoding:
    layer_name: str
    activations: Tensor


class Network:
    """Ordered named layers plus bookkeeping about how they were trained."""

    def __init__(self, input_dims, layers: Sequence[LayerSpec], training_meta: Optional[dict] = None):
        self.input_dims = tuple(int(d) for d in input_dims)
        self.layers = tuple(layers)
        names = [s.name for s in self.layers]
        if len(set(names)) != len(names):
            raise InputError(f"layer names must be unique, got {names}")
        self.training_meta = dict(training_meta or {"corpus_id": "", "epochs": 0, "final_accuracy": 0.0})
        # walk the shape formulas once; incompatible stacks fail here, not mid-forward
        table = {}
        dims = self.input_dims
        for spec in self.layers:
            dims = output_dims(dims, spec.params)
            table[spec.name] = dims
        self.shape_table = table
        self._index = {s.name: i for i, s in enumerate(self.layers)}

    def layer_index(self, name: str) -> int:
        if name not in self._index:
            raise UnknownLayerError(f"no layer named '{name}' (have {list(self._index)})")
        return self._index[name]

    def ops(self) -> list:
        return [s.params for s in self.layers]

    def output_dims_at(self, name: str) -> tuple:
        self.layer_index(name)
        return self.shape_table[name]

    @property
    def num_categories(self) -> int:
        last = self.layers[-1].params
        if not isinstance(last, DenseParams):
            raise InputError("network has no dense head")
        return last.weights.dims[0]

    def with_ops(self, new_ops: Sequence[LayerOp], training_meta: Optional[dict] = None) -> "Network":
        specs = [
            LayerSpec(s.kind, s.name, op) for s, op in zip(self.layers, new_ops)
        ]
        return Network(self.input_dims, specs, training_meta or self.training_meta)


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


def build_reference_net(num_categories: int, input_dims=(3, 64, 64), seed: int = 0) -> Network:
    """Three conv blocks of increasing depth, then a dense classifier head.

    conv(16) relu pool2 conv(32) relu pool2 conv(64) relu dense(ncat),
    all 3x3 pad 1 stride 1. Weights are seeded uniform Glorot draws.
    """
    if num_categories < 1:
        raise InputError(f"num_categories must be >= 1, got {num_categories}")
    rng = np.random.default_rng(seed)
    c, h, w = input_dims
    specs = []
    dims = tuple(input_dims)
    for i, out_ch in enumerate((16, 32, 64), start=1):
        in_ch = dims[0]
        wgt = _glorot(rng, (out_ch, in_ch, 3, 3), in_ch * 9, out_ch * 9)
        bias = np.zeros(out_ch, dtype=np.float32)
        conv = ConvParams(out_ch, in_ch, 3, 3, 1, 1, Tensor.from_array(wgt), Tensor.from_array(bias))
        specs.append(LayerSpec("conv", f"conv{i}", conv))
        dims = output_dims(dims, conv)
        specs.append(LayerSpec("relu", f"relu{i}", Relu()))
        if i < 3:
            pool = PoolParams(kernel=2, stride=2)
            specs.append(LayerSpec("maxpool", f"pool{i}", pool))
            dims = output_dims(dims, pool)
    nin = math.prod(dims)
    dw = _glorot(rng, (num_categories, nin), nin, num_categories)
    db = np.zeros(num_categories, dtype=np.float32)
    specs.append(
        LayerSpec("dense", "dense", DenseParams(Tensor.from_array(dw), Tensor.from_array(db)))
    )
    return Network(input_dims, specs)


def forward_to(net: Network, image: Tensor, layer_name: str) -> FeatureEncoding:
    """Activations after layers 0..layer_name inclusive."""
    if image.dims != net.input_dims:
        raise ShapeError(f"image dims {image.dims} != network input dims {net.input_dims}")
    stop = net.layer_index(layer_name)
    x = image.array[None]
    for spec in net.layers[: stop + 1]:
        x = forward_op_batch(x, spec.params)
    return FeatureEncoding(layer_name, Tensor.from_array(x[0]))


def forward_logits_batch(net: Network, x: np.ndarray) -> np.ndarray:
    for spec in net.layers:
        x = forward_op_batch(x, spec.params)
    return x


# ---------------------------------------------------------------------------
# training


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def sgd_step(ops: list, x: np.ndarray, y: np.ndarray, lr: float) -> tuple:
    """One cross-entropy minibatch update. Returns (new ops, loss, ncorrect)."""
    acts = [x]
    for op in ops:
        acts.append(forward_op_batch(acts[-1], op))
    logits = acts[-1]
    probs = _softmax(logits)
    n = x.shape[0]
    eps = 1e-12
    loss = float(-np.log(probs[np.arange(n), y] + eps).mean())
    ncorrect = int((logits.argmax(axis=1) == y).sum())
    dy = probs.copy()
    dy[np.arange(n), y] -= 1.0
    dy /= n
    new_ops = list(ops)
    for i in range(len(ops) - 1, -1, -1):
        op, x_in = ops[i], acts[i]
        if isinstance(op, ConvParams):
            dw, db = conv_param_grads_batch(x_in, dy, op)
            new_ops[i] = ConvParams(
                op.out_channels, op.in_channels, op.kernel_h, op.kernel_w, op.stride, op.pad,
                Tensor.from_array(op.weights.array - lr * dw.astype(np.float32)),
                Tensor.from_array(op.bias.array - lr * db.astype(np.float32)),
            )
        elif isinstance(op, DenseParams):
            dw, db = dense_param_grads_batch(x_in, dy, op)
            new_ops[i] = DenseParams(
                Tensor.from_array(op.weights.array - lr * dw.astype(np.float32)),
                Tensor.from_array(op.bias.array - lr * db.astype(np.float32)),
            )
        if i > 0:
            dy = input_grad_op_batch(x_in, dy, op)
    return new_ops, loss, ncorrect


def evaluate_accuracy(net: Network, x: np.ndarray, y: np.ndarray, chunk: int = 128) -> float:
    if len(y) == 0:
        return 1.0
    correct = 0
    for i in range(0, len(y), chunk):
        logits = forward_logits_batch(net, x[i : i + chunk])
        correct += int((logits.argmax(axis=1) == y[i : i + chunk]).sum())
    return correct / len(y)


def holdout_split(records) -> tuple:
    """Indices (train, holdout): the last 20% of each category, in order."""
    by_cat = {}
    for i, r in enumerate(records):
        by_cat.setdefault(r.category, []).append(i)
    train, hold = [], []
    for idxs in by_cat.values():
        n_hold = int(len(idxs) * 0.2)
        cut = len(idxs) - n_hold
        train.extend(idxs[:cut])
        hold.extend(idxs[cut:])
    return sorted(train), sorted(hold)


def train_classifier(
    net: Network,
    manifest: Manifest,
    epochs: int,
    lr: float,
    seed: int,
    batch_size: int = 32,
    target_accuracy: Optional[float] = None,
    verbose: bool = False,
) -> tuple:
    """Minibatch softmax-SGD on the manifest's tiles.

    Returns (trained network, history). History entry 0 is the pre-training
    evaluation; entries 1..epochs carry the running train accuracy of that
    epoch's minibatches plus a fresh holdout evaluation. If target_accuracy
    is set, training stops after the first epoch whose holdout accuracy
    reaches it.
    """
    if not manifest.records:
        raise InputError("manifest has no tile records")
    if net.num_categories != len(manifest.categories):
        raise InputError(
            f"network has {net.num_categories} outputs but manifest has "
            f"{len(manifest.categories)} categories"
        )
    x_all, y_all = load_dataset(manifest)
    if tuple(x_all.shape[1:]) != net.input_dims:
        raise ShapeError(f"tiles are {x_all.shape[1:]}, network expects {net.input_dims}")
    train_idx, hold_idx = holdout_split(manifest.records)
    x_tr, y_tr = x_all[train_idx], y_all[train_idx]
    x_ho, y_ho = x_all[hold_idx], y_all[hold_idx]

    ops = net.ops()
    rng = np.random.default_rng(seed)
    work = net
    history = [
        {
            "epoch": 0,
            "loss": None,
            "train_accuracy": evaluate_accuracy(work, x_tr, y_tr),
            "holdout_accuracy": evaluate_accuracy(work, x_ho, y_ho),
        }
    ]
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(y_tr))
        losses = []
        correct = 0
        for start in range(0, len(order), batch_size):
            sel = order[start : start + batch_size]
            ops, loss, nc = sgd_step(ops, x_tr[sel], y_tr[sel], lr)
            losses.append(loss * len(sel))
            correct += nc
        work = net.with_ops(ops)
        entry = {
            "epoch": epoch,
            "loss": float(sum(losses) / max(len(y_tr), 1)),
            "train_accuracy": correct / max(len(y_tr), 1),
            "holdout_accuracy": evaluate_accuracy(work, x_ho, y_ho),
        }
        history.append(entry)
        if verbose:
            print(
                f"epoch {epoch}: loss {entry['loss']:.4f} "
                f"train {entry['train_accuracy']:.3f} holdout {entry['holdout_accuracy']:.3f}"
            )
        if target_accuracy is not None and entry["holdout_accuracy"] >= target_accuracy:
            break
    meta = {
        "corpus_id": manifest_digest(manifest),
        "epochs": len(history) - 1,
        "final_accuracy": history[-1]["holdout_accuracy"],
    }
    return net.with_ops(ops, training_meta=meta), history


# ---------------------------------------------------------------------------
# checkpoints


def _spec_to_json(spec: LayerSpec) -> dict:
    p = spec.params
    if isinstance(p, ConvParams):
        params = {
            "out_channels": p.out_channels,
            "in_channels": p.in_channels,
            "kernel_h": p.kernel_h,
            "kernel_w": p.kernel_w,
            "stride": p.stride,
            "pad": p.pad,
        }
    elif isinstance(p, PoolParams):
        params = {"kernel": p.kernel, "stride": p.stride}
    elif isinstance(p, DenseParams):
        params = {"nout": p.weights.dims[0], "nin": p.weights.dims[1]}
    else:
        params = {}
    return {"kind": spec.kind, "name": spec.name, "params": params}


def _weight_blocks(spec: LayerSpec) -> list:
    p = spec.params
    if isinstance(p, (ConvParams, DenseParams)):
        return [p.weights.array, p.bias.array]
    return []


def save_checkpoint(net: Network, path) -> None:
    header = {
        "input_dims": list(net.input_dims),
        "layers": [_spec_to_json(s) for s in net.layers],
        "training_meta": net.training_meta,
    }
    hdr = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<i", CHECKPOINT_VERSION)
    out += struct.pack("<q", len(hdr))
    out += hdr
    for spec in net.layers:
        for block in _weight_blocks(spec):
            out += np.ascontiguousarray(block, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(out))


def _rebuild_op(entry: dict, blocks: list) -> LayerOp:
    kind, p = entry["kind"], entry["params"]
    if kind == "conv":
        w, b = blocks
        return ConvParams(
            p["out_channels"], p["in_channels"], p["kernel_h"], p["kernel_w"],
            p["stride"], p["pad"],
            Tensor.from_array(w.reshape(p["out_channels"], p["in_channels"], p["kernel_h"], p["kernel_w"])),
            Tensor.from_array(b),
        )
    if kind == "maxpool":
        return PoolParams(kernel=p["kernel"], stride=p["stride"])
    if kind == "dense":
        w, b = blocks
        return DenseParams(Tensor.from_array(w.reshape(p["nout"], p["nin"])), Tensor.from_array(b))
    if kind == "relu":
        return Relu()
    raise CheckpointFormatError(f"unknown layer kind '{kind}'", 0)


def load_checkpoint(path) -> Network:
    data = Path(path).read_bytes()
    pos = 0
    if data[:5] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError("bad magic, not a network checkpoint", 0)
    pos = 5
    if len(data) < pos + 4:
        raise CheckpointFormatError("truncated before version field", len(data))
    (version,) = struct.unpack_from("<i", data, pos)
    if version > CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {version} is newer than supported {CHECKPOINT_VERSION}"
        )
    if version < 1:
        raise CheckpointFormatError(f"nonsensical version {version}", pos)
    pos += 4
    if len(data) < pos + 8:
        raise CheckpointFormatError("truncated before header length", len(data))
    (hlen,) = struct.unpack_from("<q", data, pos)
    pos += 8
    if hlen < 2 or len(data) < pos + hlen:
        raise CheckpointFormatError("truncated inside header", len(data))
    try:
        header = json.loads(data[pos : pos + hlen])
    except json.JSONDecodeError as e:
        raise CheckpointFormatError(f"header is not valid JSON: {e}", pos) from e
    pos += hlen

    specs = []
    for entry in header["layers"]:
        kind, p = entry["kind"], entry["params"]
        if kind == "conv":
            sizes = [
                p["out_channels"] * p["in_channels"] * p["kernel_h"] * p["kernel_w"],
                p["out_channels"],
            ]
        elif kind == "dense":
            sizes = [p["nout"] * p["nin"], p["nout"]]
        else:
            sizes = []
        blocks = []
        for nfloats in sizes:
            nbytes = nfloats * 4
            if len(data) < pos + nbytes:
                raise CheckpointFormatError(
                    f"truncated inside weights of layer '{entry['name']}'", len(data)
                )
            blocks.append(np.frombuffer(data, dtype="<f4", count=nfloats, offset=pos).copy())
            pos += nbytes
        specs.append(LayerSpec(kind, entry["name"], _rebuild_op(entry, blocks)))
    if pos != len(data):
        raise CheckpointFormatError(f"{len(data) - pos} trailing bytes after weights", pos)
    return Network(header["input_dims"], specs, header.get("training_meta"))


def checkpoint_roundtrip(net: Network, path) -> Network:
    save_checkpoint(net, path)
    return load_checkpoint(path)
