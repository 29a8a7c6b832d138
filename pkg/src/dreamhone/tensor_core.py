"""Dense tensors and the fixed layer taxonomy: conv, relu, maxpool, dense.

Forward math, input-gradient math for pixel ascent, parameter gradients for
training, and a 64-bit central-difference oracle. All operations are pure:
inputs are never mutated, outputs are fresh arrays. Activations are float32
in the normal pipeline; every op preserves a float64 input dtype so the
finite-difference oracle can run the same graph at full precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InputError, ShapeError

__all__ = [
    "Tensor",
    "ConvParams",
    "PoolParams",
    "DenseParams",
    "Relu",
    "LayerOp",
    "conv2d",
    "relu",
    "maxpool",
    "dense",
    "forward_op",
    "output_dims",
    "backprop_to_input",
    "finite_diff",
]


class Tensor:
    """Dense n-dimensional array of reals, row-major with the last dim fastest.

    Thin wrapper over a C-contiguous numpy array. ``dims`` and the flat
    ``data`` view expose the canonical representation; ``array`` is the
    working ndarray.
    """

    __slots__ = ("array",)

    def __init__(self, dims: Sequence[int], data, dtype=np.float32):
        dims = tuple(int(d) for d in dims)
        if not dims or any(d < 1 for d in dims):
            raise ShapeError(f"dims must be non-empty positive integers, got {dims}")
        arr = np.asarray(data, dtype=dtype).reshape(-1)
        expected = math.prod(dims)
        if arr.size != expected:
            raise ShapeError(
                f"data length {arr.size} does not match product of dims {dims} = {expected}"
            )
        self.array = np.ascontiguousarray(arr.reshape(dims))

    @classmethod
    def from_array(cls, array: np.ndarray) -> "Tensor":
        """Wrap an ndarray, keeping its dtype (float32 or float64)."""
        t = object.__new__(cls)
        arr = np.ascontiguousarray(array)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        t.array = arr
        return t

    @classmethod
    def zeros(cls, dims: Sequence[int], dtype=np.float32) -> "Tensor":
        return cls.from_array(np.zeros(tuple(dims), dtype=dtype))

    @property
    def dims(self) -> tuple:
        return self.array.shape

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the values."""
        return self.array.reshape(-1)

    @property
    def size(self) -> int:
        return self.array.size

    def copy(self) -> "Tensor":
        return Tensor.from_array(self.array.copy())

    def __repr__(self):
        return f"Tensor(dims={self.dims}, dtype={self.array.dtype})"


def _as_array(t) -> np.ndarray:
    return t.array if isinstance(t, Tensor) else np.asarray(t)


@dataclass(frozen=True)
class ConvParams:
    """Shared-weight cross-correlation over local receptive fields."""

    out_channels: int
    in_channels: int
    kernel_h: int
    kernel_w: int
    stride: int
    pad: int
    weights: Tensor
    bias: Tensor

    def __post_init__(self):
        want = (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)
        if self.weights.dims != want:
            raise ShapeError(f"conv weights dims {self.weights.dims} != declared {want}")
        if self.bias.dims != (self.out_channels,):
            raise ShapeError(f"conv bias dims {self.bias.dims} != ({self.out_channels},)")
        if self.stride < 1 or self.pad < 0:
            raise InputError(f"stride must be >= 1 and pad >= 0, got {self.stride}, {self.pad}")


@dataclass(frozen=True)
class PoolParams:
    """Windowed-maximum sub-sampling."""

    kernel: int
    stride: int

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1:
            raise InputError(f"pool kernel and stride must be >= 1, got {self.kernel}, {self.stride}")


@dataclass(frozen=True)
class DenseParams:
    """Affine map of the flattened input."""

    weights: Tensor  # [nout, nin]
    bias: Tensor  # [nout]

    def __post_init__(self):
        if len(self.weights.dims) != 2:
            raise ShapeError(f"dense weights must be 2-d, got dims {self.weights.dims}")
        if self.bias.dims != (self.weights.dims[0],):
            raise ShapeError(
                f"dense bias dims {self.bias.dims} != ({self.weights.dims[0]},)"
            )


@dataclass(frozen=True)
class Relu:
    """Elementwise max(0, x); carries no parameters."""


LayerOp = Union[ConvParams, PoolParams, DenseParams, Relu]


# ---------------------------------------------------------------------------
# batched kernels (leading N axis); the public single-image ops wrap these


def _conv_out_hw(h: int, w: int, p: ConvParams) -> tuple:
    oh = (h + 2 * p.pad - p.kernel_h) // p.stride + 1
    ow = (w + 2 * p.pad - p.kernel_w) // p.stride + 1
    return oh, ow


def _im2col(x: np.ndarray, p: ConvParams) -> np.ndarray:
    """x [N,C,H,W] -> columns [N*Ho*Wo, C*kh*kw], channel-major patches."""
    if p.pad:
        x = np.pad(x, ((0, 0), (0, 0), (p.pad, p.pad), (p.pad, p.pad)))
    win = sliding_window_view(x, (p.kernel_h, p.kernel_w), axis=(2, 3))
    win = win[:, :, :: p.stride, :: p.stride]
    n, c, oh, ow = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * p.kernel_h * p.kernel_w)


def conv_forward_batch(x: np.ndarray, p: ConvParams) -> np.ndarray:
    n, c, h, w = x.shape
    if c != p.in_channels:
        raise ShapeError(f"input has {c} channels, conv expects {p.in_channels}")
    if h + 2 * p.pad < p.kernel_h or w + 2 * p.pad < p.kernel_w:
        raise ShapeError(
            f"kernel {p.kernel_h}x{p.kernel_w} larger than padded input "
            f"{h + 2 * p.pad}x{w + 2 * p.pad}"
        )
    oh, ow = _conv_out_hw(h, w, p)
    cols = _im2col(x, p)
    wm = p.weights.array.reshape(p.out_channels, -1)
    out = cols @ wm.T + p.bias.array
    return out.reshape(n, oh, ow, p.out_channels).transpose(0, 3, 1, 2)


def conv_input_grad_batch(dy: np.ndarray, p: ConvParams, in_hw: tuple) -> np.ndarray:
    """Gradient w.r.t. input: full correlation with flipped kernels."""
    n = dy.shape[0]
    h, w = in_hw
    oh, ow = _conv_out_hw(h, w, p)
    dyf = dy.transpose(0, 2, 3, 1).reshape(n * oh * ow, p.out_channels)
    wm = p.weights.array.reshape(p.out_channels, -1)
    dcols = dyf @ wm  # [N*Ho*Wo, C*kh*kw]
    dwin = dcols.reshape(n, oh, ow, p.in_channels, p.kernel_h, p.kernel_w)
    dxp = np.zeros((n, p.in_channels, h + 2 * p.pad, w + 2 * p.pad), dtype=dcols.dtype)
    s = p.stride
    for i in range(p.kernel_h):
        for j in range(p.kernel_w):
            dxp[:, :, i : i + s * oh : s, j : j + s * ow : s] += dwin[:, :, :, :, i, j].transpose(
                0, 3, 1, 2
            )
    if p.pad:
        return dxp[:, :, p.pad : p.pad + h, p.pad : p.pad + w]
    return dxp


def conv_param_grads_batch(x: np.ndarray, dy: np.ndarray, p: ConvParams) -> tuple:
    n, _, oh, ow = dy.shape
    dyf = dy.transpose(0, 2, 3, 1).reshape(n * oh * ow, p.out_channels)
    cols = _im2col(x, p)
    dw = (dyf.T @ cols).reshape(p.weights.dims)
    db = dyf.sum(axis=0)
    return dw, db


def _pool_windows(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, oh, ow = win.shape[:4]
    return win.reshape(n, c, oh, ow, k * k)


def pool_forward_batch(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    h, w = x.shape[2:]
    if h < k or w < k:
        raise ShapeError(f"pool window {k} larger than input {h}x{w}")
    return _pool_windows(x, k, stride).max(axis=4)


def pool_backward_batch(x: np.ndarray, dy: np.ndarray, k: int, stride: int) -> np.ndarray:
    """Route each upstream element to the first row-major maximum of its window."""
    n, c, h, w = x.shape
    win = _pool_windows(x, k, stride)
    oh, ow = win.shape[2:4]
    idx = win.argmax(axis=4)  # first max wins ties
    dx = np.zeros_like(x, dtype=dy.dtype)
    if k == stride:
        # non-overlapping: scatter via one-hot and inverse reshape
        onehot = idx[..., None] == np.arange(k * k)
        dwin = dy[..., None] * onehot
        dwin = dwin.reshape(n, c, oh, ow, k, k).transpose(0, 1, 2, 4, 3, 5)
        dx[:, :, : oh * k, : ow * k] = dwin.reshape(n, c, oh * k, ow * k)
        return dx
    rows = (np.arange(oh) * stride)[:, None] + idx // k
    cols = (np.arange(ow) * stride)[None, :] + idx % k
    ni = np.arange(n)[:, None, None, None]
    ci = np.arange(c)[None, :, None, None]
    np.add.at(dx, (ni, ci, rows, cols), dy)
    return dx


def dense_forward_batch(x: np.ndarray, p: DenseParams) -> np.ndarray:
    n = x.shape[0]
    flat = x.reshape(n, -1)
    nout, nin = p.weights.dims
    if flat.shape[1] != nin:
        raise ShapeError(f"dense expects {nin} inputs, got {flat.shape[1]}")
    return flat @ p.weights.array.T + p.bias.array


def dense_input_grad_batch(dy: np.ndarray, p: DenseParams, in_shape: tuple) -> np.ndarray:
    return (dy @ p.weights.array).reshape(in_shape)


def dense_param_grads_batch(x: np.ndarray, dy: np.ndarray, p: DenseParams) -> tuple:
    flat = x.reshape(x.shape[0], -1)
    return dy.T @ flat, dy.sum(axis=0)


def forward_op_batch(x: np.ndarray, op: LayerOp) -> np.ndarray:
    if isinstance(op, ConvParams):
        return conv_forward_batch(x, op)
    if isinstance(op, Relu):
        return np.maximum(x, 0)
    if isinstance(op, PoolParams):
        return pool_forward_batch(x, op.kernel, op.stride)
    if isinstance(op, DenseParams):
        return dense_forward_batch(x, op)
    raise InputError(f"unknown layer op {op!r}")


def input_grad_op_batch(x: np.ndarray, dy: np.ndarray, op: LayerOp) -> np.ndarray:
    if isinstance(op, ConvParams):
        return conv_input_grad_batch(dy, op, x.shape[2:])
    if isinstance(op, Relu):
        return dy * (x > 0)
    if isinstance(op, PoolParams):
        return pool_backward_batch(x, dy, op.kernel, op.stride)
    if isinstance(op, DenseParams):
        return dense_input_grad_batch(dy, op, x.shape)
    raise InputError(f"unknown layer op {op!r}")


# ---------------------------------------------------------------------------
# single-image public operations


def conv2d(t: Tensor, p: ConvParams) -> Tensor:
    """Biased cross-correlation with zero padding; see ConvParams."""
    x = _as_array(t)
    if x.ndim != 3:
        raise ShapeError(f"conv2d expects a [C,H,W] tensor, got dims {x.shape}")
    return Tensor.from_array(conv_forward_batch(x[None], p)[0])


def relu(t: Tensor) -> Tensor:
    return Tensor.from_array(np.maximum(_as_array(t), 0))


def maxpool(t: Tensor, k: int, stride: int) -> Tensor:
    x = _as_array(t)
    if x.ndim != 3:
        raise ShapeError(f"maxpool expects a [C,H,W] tensor, got dims {x.shape}")
    return Tensor.from_array(pool_forward_batch(x[None], k, stride)[0])


def dense(t: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    p = DenseParams(weights=weights, bias=bias)
    return Tensor.from_array(dense_forward_batch(_as_array(t).reshape(1, -1), p)[0])


def forward_op(t: Tensor, op: LayerOp) -> Tensor:
    """Apply one layer op to a single [C,H,W] (or flat) tensor."""
    x = _as_array(t)
    return Tensor.from_array(forward_op_batch(x[None], op)[0])


def output_dims(in_dims: tuple, op: LayerOp) -> tuple:
    """Shape formula for one layer, without computing values."""
    if isinstance(op, ConvParams):
        c, h, w = in_dims
        if c != op.in_channels:
            raise ShapeError(f"input has {c} channels, conv expects {op.in_channels}")
        if h + 2 * op.pad < op.kernel_h or w + 2 * op.pad < op.kernel_w:
            raise ShapeError(f"kernel larger than padded input for dims {in_dims}")
        oh, ow = _conv_out_hw(h, w, op)
        return (op.out_channels, oh, ow)
    if isinstance(op, Relu):
        return tuple(in_dims)
    if isinstance(op, PoolParams):
        c, h, w = in_dims
        if h < op.kernel or w < op.kernel:
            raise ShapeError(f"pool window {op.kernel} larger than input {h}x{w}")
        oh = (h - op.kernel) // op.stride + 1
        ow = (w - op.kernel) // op.stride + 1
        return (c, oh, ow)
    if isinstance(op, DenseParams):
        nout, nin = op.weights.dims
        if math.prod(in_dims) != nin:
            raise ShapeError(f"dense expects {nin} inputs, got dims {in_dims}")
        return (nout,)
    raise InputError(f"unknown layer op {op!r}")


def backprop_to_input(layers: Sequence[LayerOp], input: Tensor, upstream: Tensor) -> Tensor:
    """dLoss/dInput for a scalar loss whose gradient at the top is ``upstream``.

    Forward activations are recomputed here; reverse traversal routes the
    gradient through conv (flipped-kernel full correlation), relu (mask),
    maxpool (argmax), and dense (transpose map).
    """
    x = _as_array(input)[None]
    acts = [x]
    for op in layers:
        acts.append(forward_op_batch(acts[-1], op))
    dy = _as_array(upstream)[None]
    if dy.shape != acts[-1].shape:
        raise ShapeError(
            f"upstream dims {dy.shape[1:]} != forward output dims {acts[-1].shape[1:]}"
        )
    for op, x_in in zip(reversed(layers), reversed(acts[:-1])):
        dy = input_grad_op_batch(x_in, dy, op)
    return Tensor.from_array(dy[0])


def finite_diff(loss_fn: Callable[[Tensor], float], x: Tensor, eps: float) -> Tensor:
    """Central-difference gradient oracle, evaluated in float64."""
    if eps <= 0:
        raise InputError(f"eps must be positive, got {eps}")
    base = _as_array(x).astype(np.float64)
    flat = base.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(loss_fn(Tensor.from_array(base)))
        flat[i] = orig - eps
        lo = float(loss_fn(Tensor.from_array(base)))
        flat[i] = orig
        grad[i] = (hi - lo) / (2.0 * eps)
    return Tensor.from_array(grad.reshape(base.shape))
