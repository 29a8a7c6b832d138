import numpy as np
import pytest
from PIL import Image

from dreamhone.tensor_core import (
    ConvParams,
    DenseParams,
    PoolParams,
    Relu,
    Tensor,
    output_dims,
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------------------
# synthetic texture corpus: three categories a first-layer filter can tell apart


def texture_image(kind, size=128, stripe=4, phase=0, lo=0.15, hi=0.85):
    idx = np.arange(size)
    band = ((idx + phase) // stripe) % 2
    if kind == "hstripe":
        mask = np.broadcast_to(band[:, None], (size, size))
    elif kind == "vstripe":
        mask = np.broadcast_to(band[None, :], (size, size))
    elif kind == "checker":
        mask = band[:, None] != band[None, :]
    else:
        raise ValueError(kind)
    img = np.where(mask == 0, lo, hi)
    rgb = np.repeat(img[:, :, None], 3, axis=2)
    return (rgb * 255).astype(np.uint8)


def build_texture_corpus(root, n_per_cat=6, size=128, seed=7):
    rng = np.random.default_rng(seed)
    for kind in ("checker", "hstripe", "vstripe"):
        d = root / kind
        d.mkdir(parents=True, exist_ok=True)
        for i in range(n_per_cat):
            stripe = int(rng.choice([3, 4, 5, 6]))
            phase = int(rng.integers(0, 2 * stripe))
            lo = float(rng.uniform(0.05, 0.25))
            hi = float(rng.uniform(0.75, 0.95))
            arr = texture_image(kind, size=size, stripe=stripe, phase=phase, lo=lo, hi=hi)
            Image.fromarray(arr, mode="RGB").save(d / f"{kind}_{i:02d}.png")
    return root


@pytest.fixture(scope="session")
def texture_corpus_dir(tmp_path_factory):
    return build_texture_corpus(tmp_path_factory.mktemp("corpus"), n_per_cat=6)


def make_conv(rng, in_ch, out_ch, k, stride=1, pad=None):
    if pad is None:
        pad = k // 2
    w = rng.normal(0, 0.5, size=(out_ch, in_ch, k, k)).astype(np.float32)
    b = rng.normal(0, 0.1, size=out_ch).astype(np.float32)
    return ConvParams(
        out_channels=out_ch,
        in_channels=in_ch,
        kernel_h=k,
        kernel_w=k,
        stride=stride,
        pad=pad,
        weights=Tensor.from_array(w),
        bias=Tensor.from_array(b),
    )


def make_dense(rng, nin, nout):
    w = rng.normal(0, 0.5, size=(nout, nin)).astype(np.float32)
    b = rng.normal(0, 0.1, size=nout).astype(np.float32)
    return DenseParams(weights=Tensor.from_array(w), bias=Tensor.from_array(b))


def random_layer_stack(rng):
    """A random 2-4 layer net over a small input, for gradient checking.

    Returns (layers, in_dims). Dense may only appear last; pool kernels are
    constrained to fit whatever spatial size remains.
    """
    c = int(rng.integers(1, 4))
    h = int(rng.integers(4, 9))
    w = int(rng.integers(4, 9))
    in_dims = (c, h, w)
    depth = int(rng.integers(2, 5))
    layers = []
    dims = in_dims
    for li in range(depth):
        last = li == depth - 1
        choices = ["conv", "relu"]
        if min(dims[1], dims[2]) >= 2:
            choices.append("pool")
        if last:
            choices.append("dense")
        kind = choices[int(rng.integers(0, len(choices)))]
        if kind == "conv":
            k = int(rng.integers(1, 4))
            pad = int(rng.integers(0, 2))
            while dims[1] + 2 * pad < k or dims[2] + 2 * pad < k:
                k -= 1
            op = make_conv(rng, dims[0], int(rng.integers(1, 5)), k, stride=1, pad=pad)
        elif kind == "relu":
            op = Relu()
        elif kind == "pool":
            k = int(rng.integers(2, min(dims[1], dims[2]) + 1))
            stride = int(rng.integers(1, k + 1))
            op = PoolParams(kernel=k, stride=stride)
        else:
            nin = dims[0] * (dims[1] * dims[2] if len(dims) == 3 else 1)
            op = make_dense(rng, nin, int(rng.integers(1, 6)))
        layers.append(op)
        dims = output_dims(dims, op)
        if len(dims) == 1:
            break
    return layers, in_dims
