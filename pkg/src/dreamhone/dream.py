"""Guided dreaming: patch-matched feature loss driving pixel gradient ascent.

A guide image is encoded at a chosen layer and split into patches. Each
iteration encodes the evolving canvas the same way, matches every canvas
patch to its best guide patch, and nudges the pixels along the loss
gradient. Two loss variants: DotMax exaggerates whatever correlates with
the guide features; DistMin pulls feature distances down for tamer output.
Schedules sequence phases across layers; live patches re-steer a running
session at iteration boundaries; optional in-loop training updates the
network weights between iterations.
"""

from __future__ import annotations

import threading
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InputError, ShapeError, UnknownLayerError
from .network import Network, forward_to, sgd_step
from .tensor_core import Tensor, backprop_to_input
from .tiling import Manifest, load_dataset

__all__ = [
    "LossMode",
    "PatchGrid",
    "DreamConfig",
    "DreamSession",
    "encode_patches",
    "match_patches",
    "dream_loss",
    "dream_gradient",
    "dream_step",
    "run_dream",
    "apply_live_patch",
    "hone_in_loop",
    "config_from_dict",
    "schedule_from_json",
    "PATCHABLE_FIELDS",
]


class LossMode(Enum):
    DotMax = "DotMax"
    DistMin = "DistMin"


@dataclass(frozen=True)
class PatchGrid:
    layer_name: str
    patch_size: int
    grid_dims: tuple  # (rows, cols)
    patches: np.ndarray  # [rows*cols, C*p*p]


@dataclass(frozen=True)
class DreamConfig:
    layer_name: str
    mode: LossMode = LossMode.DistMin
    step_size: float = 0.04
    iterations: int = 10
    patch_size: int = 3
    jitter: int = 2
    clamp: bool = True
    seed: int = 0
    guide_blend: float = 1.0

    def __post_init__(self):
        if not isinstance(self.mode, LossMode):
            raise InputError(f"mode must be a LossMode, got {self.mode!r}")
        if not self.layer_name:
            raise InputError("layer_name must be a non-empty string")
        if not self.step_size > 0:
            raise InputError(f"step_size must be > 0, got {self.step_size}")
        if self.iterations < 0:
            raise InputError(f"iterations must be >= 0, got {self.iterations}")
        if self.patch_size < 1:
            raise InputError(f"patch_size must be >= 1, got {self.patch_size}")
        if self.jitter < 0:
            raise InputError(f"jitter must be >= 0, got {self.jitter}")
        if not 0.0 <= self.guide_blend <= 1.0:
            raise InputError(f"guide_blend must be in [0,1], got {self.guide_blend}")


_CONFIG_FIELDS = {f.name for f in fields(DreamConfig)}
# iterations fix a phase's length; they are not live-patchable
PATCHABLE_FIELDS = _CONFIG_FIELDS - {"iterations"}


def config_from_dict(d: dict, base: Optional[DreamConfig] = None) -> DreamConfig:
    """Build a DreamConfig from JSON-ish fields, optionally over a base."""
    unknown = set(d) - _CONFIG_FIELDS
    if unknown:
        raise InputError(f"unknown config fields {sorted(unknown)}")
    vals = dict(d)
    if "mode" in vals and not isinstance(vals["mode"], LossMode):
        try:
            vals["mode"] = LossMode(vals["mode"])
        except ValueError:
            raise InputError(
                f"mode must be one of {[m.value for m in LossMode]}, got {vals['mode']!r}"
            ) from None
    for key in ("step_size", "guide_blend"):
        if key in vals:
            vals[key] = float(vals[key])
    for key in ("iterations", "patch_size", "jitter", "seed"):
        if key in vals:
            vals[key] = int(vals[key])
    if base is not None:
        return replace(base, **vals)
    if "layer_name" not in vals:
        raise InputError("config requires layer_name")
    return DreamConfig(**vals)


def schedule_from_json(phases) -> list:
    """A schedule is a JSON list of phase objects (config fields + iterations)."""
    if not isinstance(phases, list) or not phases:
        raise InputError("schedule must be a non-empty JSON list of phase objects")
    return [config_from_dict(p) for p in phases]


def config_to_dict(cfg: DreamConfig) -> dict:
    d = asdict(cfg)
    d["mode"] = cfg.mode.value
    return d


# ---------------------------------------------------------------------------
# encoding and matching


def _patchify(acts: np.ndarray, p: int) -> tuple:
    c, h, w = acts.shape
    rows, cols = h // p, w // p
    block = acts[:, : rows * p, : cols * p].reshape(c, rows, p, cols, p)
    patches = block.transpose(1, 3, 0, 2, 4).reshape(rows * cols, c * p * p)
    return (rows, cols), np.ascontiguousarray(patches)


def encode_patches(net: Network, image: Tensor, layer_name: str, patch_size: int) -> PatchGrid:
    """Layer activations cut into non-overlapping p x p channel-major patches."""
    acts = forward_to(net, image, layer_name).activations.array
    c, h, w = acts.shape
    if patch_size > min(h, w):
        raise InputError(
            f"patch_size {patch_size} exceeds layer '{layer_name}' spatial dims {h}x{w}"
        )
    grid_dims, patches = _patchify(acts, patch_size)
    return PatchGrid(layer_name, patch_size, grid_dims, patches)


def match_patches(canvas_grid: PatchGrid, guide_grid: PatchGrid, mode: LossMode) -> tuple:
    """Best guide patch per canvas patch. Ties break to the lowest guide index.

    Scores are reduced elementwise per pair (not via matmul) so results are
    reproducible bit-for-bit against a naive per-pair scan.
    """
    cp, gp = canvas_grid.patches, guide_grid.patches
    if cp.shape[1] != gp.shape[1]:
        raise ShapeError(
            f"patch vector lengths differ: canvas {cp.shape[1]} vs guide {gp.shape[1]}"
        )
    n = cp.shape[0]
    assignment = np.empty(n, dtype=np.int64)
    selected = np.empty(n, dtype=cp.dtype)
    chunk = max(1, 2**22 // (gp.shape[0] * cp.shape[1] + 1))
    for start in range(0, n, chunk):
        block = cp[start : start + chunk]
        if mode is LossMode.DotMax:
            scores = (block[:, None, :] * gp[None, :, :]).sum(axis=2)
            idx = scores.argmax(axis=1)
        else:
            scores = ((block[:, None, :] - gp[None, :, :]) ** 2).sum(axis=2)
            idx = scores.argmin(axis=1)
        assignment[start : start + len(block)] = idx
        selected[start : start + len(block)] = scores[np.arange(len(block)), idx]
    loss = float(np.sum(selected, dtype=np.float64))
    return assignment, loss


# ---------------------------------------------------------------------------
# one gradient step


def _layer_prefix(net: Network, layer_name: str) -> list:
    stop = net.layer_index(layer_name)
    return [spec.params for spec in net.layers[: stop + 1]]


def _blended_loss_and_upstream(
    acts: np.ndarray, guide_grid: Optional[PatchGrid], cfg: DreamConfig
) -> tuple:
    """Total loss and dLoss/dActivations at the dream layer.

    total = blend * L_guided + (1 - blend) * sum(acts^2); DistMin enters
    negated so a single ascent loop serves both modes.
    """
    gb = cfg.guide_blend
    upstream = np.zeros_like(acts)
    total = 0.0
    if gb > 0.0:
        if guide_grid is None:
            raise InputError("guide_blend > 0 requires a guide image")
        (rows, cols), cpatches = _patchify(acts, cfg.patch_size)
        assignment, matched = match_patches(
            PatchGrid(cfg.layer_name, cfg.patch_size, (rows, cols), cpatches),
            guide_grid,
            cfg.mode,
        )
        gsel = guide_grid.patches[assignment]
        if cfg.mode is LossMode.DotMax:
            dpatch = gsel
            total += gb * matched
        else:
            dpatch = -2.0 * (cpatches - gsel)
            total += gb * -matched
        c = acts.shape[0]
        p = cfg.patch_size
        block = dpatch.reshape(rows, cols, c, p, p).transpose(2, 0, 3, 1, 4)
        upstream[:, : rows * p, : cols * p] += gb * block.reshape(c, rows * p, cols * p)
    if gb < 1.0:
        total += (1.0 - gb) * float(np.sum(acts.astype(np.float64) ** 2))
        upstream += (1.0 - gb) * 2.0 * acts
    return total, upstream


def dream_loss(net: Network, canvas: Tensor, guide_grid: Optional[PatchGrid], cfg: DreamConfig) -> float:
    """The blended objective at the current canvas, without any step."""
    acts = forward_to(net, canvas, cfg.layer_name).activations.array
    total, _ = _blended_loss_and_upstream(acts, guide_grid, cfg)
    return total


def dream_gradient(
    net: Network, canvas: Tensor, guide_grid: Optional[PatchGrid], cfg: DreamConfig
) -> tuple:
    """(loss, pixel gradient) with the patch assignment frozen for this step."""
    acts = forward_to(net, canvas, cfg.layer_name).activations.array
    total, upstream = _blended_loss_and_upstream(acts, guide_grid, cfg)
    grad = backprop_to_input(_layer_prefix(net, cfg.layer_name), canvas, Tensor.from_array(upstream))
    return total, grad


def dream_step(
    net: Network,
    canvas: Tensor,
    guide_grid: Optional[PatchGrid],
    cfg: DreamConfig,
    rng: np.random.Generator,
) -> tuple:
    """One ascent step. Returns (new canvas, pre-step loss)."""
    if canvas.dims != net.input_dims:
        raise ShapeError(f"canvas dims {canvas.dims} != network input {net.input_dims}")
    j = cfg.jitter
    oy, ox = (int(v) for v in rng.integers(-j, j + 1, size=2))
    shifted = np.roll(canvas.array, (oy, ox), axis=(1, 2))
    loss, grad = dream_gradient(net, Tensor.from_array(shifted), guide_grid, cfg)
    g = grad.array
    shifted = shifted + cfg.step_size * g / (np.abs(g).mean() + 1e-8)
    out = np.roll(shifted, (-oy, -ox), axis=(1, 2))
    if cfg.clamp:
        out = np.clip(out, 0.0, 1.0)
    return Tensor.from_array(out.astype(np.float32, copy=False)), loss


# ---------------------------------------------------------------------------
# sessions: schedules, live patches, in-loop training


def _check_layer_compat(net: Network, cfg: DreamConfig) -> None:
    dims = net.shape_table[net.layers[net.layer_index(cfg.layer_name)].name]
    if cfg.guide_blend > 0.0:
        if len(dims) != 3:
            raise InputError(
                f"layer '{cfg.layer_name}' has no spatial dims; guided dreaming needs a conv-side layer"
            )
        if cfg.patch_size > min(dims[1], dims[2]):
            raise InputError(
                f"patch_size {cfg.patch_size} exceeds layer '{cfg.layer_name}' dims {dims[1]}x{dims[2]}"
            )


def _validate_patch(net: Network, patch: dict, has_guide: bool) -> None:
    unknown = set(patch) - PATCHABLE_FIELDS
    if "iterations" in patch:
        raise InputError("iterations cannot be patched on a live session")
    if unknown:
        raise InputError(f"unknown patch fields {sorted(unknown)}")
    if "layer_name" in patch:
        net.layer_index(patch["layer_name"])  # raises UnknownLayerError
    if not has_guide:
        gb = patch.get("guide_blend")
        if gb is not None and float(gb) > 0.0:
            raise InputError("session has no guide image; guide_blend must stay 0")


class DreamSession:
    """A single dream run: schedule phases, live patches, frame sink.

    One thread advances iterations via step_once/run; other threads may call
    apply_live_patch concurrently. Patches merge into the active config at
    the next iteration boundary, never mid-step.
    """

    def __init__(
        self,
        net: Network,
        source: Tensor,
        guide: Optional[Tensor],
        schedule: Sequence[DreamConfig],
    ):
        if not schedule:
            raise InputError("schedule must contain at least one phase")
        if source.dims != net.input_dims:
            raise ShapeError(f"source dims {source.dims} != network input {net.input_dims}")
        if guide is not None and guide.dims != net.input_dims:
            raise ShapeError(f"guide dims {guide.dims} != network input {net.input_dims}")
        for cfg in schedule:
            _check_layer_compat(net, cfg)
            if cfg.guide_blend > 0.0 and guide is None:
                raise InputError(
                    f"phase at layer '{cfg.layer_name}' has guide_blend > 0 but no guide given"
                )
        self.net = net
        self.guide = guide
        self.schedule = list(schedule)
        self.canvas = source.copy()
        self.iteration = 0  # completed iterations
        self.total_iterations = sum(c.iterations for c in self.schedule)
        self._lock = threading.Lock()
        self._pending: list = []
        self._in_step = False
        self._phase_index = 0
        self._phase_done = 0
        self._skip_empty_phases()
        self.active_config = (
            self.schedule[self._phase_index] if self._phase_index < len(self.schedule) else None
        )
        self._rng = np.random.default_rng(self.active_config.seed) if self.active_config else None
        self._guide_key = None
        self._guide_grid = None
        if self.active_config is not None:
            self._ensure_guide(self.active_config)

    # -- internals ----------------------------------------------------------

    def _skip_empty_phases(self):
        while self._phase_index < len(self.schedule) and self.schedule[self._phase_index].iterations == 0:
            self._phase_index += 1

    def _ensure_guide(self, cfg: DreamConfig):
        if self.guide is None or cfg.guide_blend <= 0.0:
            return
        key = (cfg.layer_name, cfg.patch_size)
        if key != self._guide_key:
            self._guide_grid = encode_patches(self.net, self.guide, cfg.layer_name, cfg.patch_size)
            self._guide_key = key

    def _merge_pending(self, pending: list):
        for patch in pending:
            self.active_config = config_from_dict(patch, base=self.active_config)
            if "seed" in patch:
                self._rng = np.random.default_rng(self.active_config.seed)
        if pending:
            _check_layer_compat(self.net, self.active_config)
            self._ensure_guide(self.active_config)

    def _advance_phase_if_done(self):
        if self._phase_done >= self.schedule[self._phase_index].iterations:
            self._phase_index += 1
            self._phase_done = 0
            self._skip_empty_phases()
            if not self.finished:
                self.active_config = self.schedule[self._phase_index]
                self._rng = np.random.default_rng(self.active_config.seed)
                self._ensure_guide(self.active_config)

    # -- public surface -----------------------------------------------------

    @property
    def finished(self) -> bool:
        return self._phase_index >= len(self.schedule)

    @property
    def phase_index(self) -> int:
        return min(self._phase_index, len(self.schedule) - 1)

    def initial_loss(self) -> float:
        """Objective of the untouched canvas under the first phase's config."""
        if self.active_config is None:
            return 0.0
        return dream_loss(self.net, self.canvas, self._guide_grid, self.active_config)

    def set_net(self, net: Network):
        """Swap weights (in-loop training); the guide is re-encoded to match."""
        self.net = net
        self._guide_key = None
        if self.active_config is not None:
            self._ensure_guide(self.active_config)

    def apply_live_patch(self, patch: dict) -> int:
        """Enqueue a partial config; returns the first iteration it governs."""
        if self.finished:
            raise InputError("session finished; no further iterations to patch")
        _validate_patch(self.net, patch, has_guide=self.guide is not None)
        # dry-run merge so out-of-range values are rejected before queuing
        merged = config_from_dict(patch, base=self.active_config)
        _check_layer_compat(self.net, merged)
        with self._lock:
            if patch:
                self._pending.append(dict(patch))
            return self.iteration + 1 + (1 if self._in_step else 0)

    def step_once(self) -> Optional[tuple]:
        """Advance one iteration; returns (iteration, loss, canvas, phase_index)."""
        if self.finished:
            return None
        with self._lock:
            # patches arriving after this point see _in_step and are promised
            # the boundary after the one we are about to cross
            self._in_step = True
            pending, self._pending = self._pending, []
        try:
            self._merge_pending(pending)
            cfg = self.active_config
            self.canvas, loss = dream_step(self.net, self.canvas, self._guide_grid, cfg, self._rng)
            phase = self._phase_index
            with self._lock:
                self.iteration += 1
                self._in_step = False
            self._phase_done += 1
        except BaseException:
            with self._lock:
                self._in_step = False
            raise
        self._advance_phase_if_done()
        return self.iteration, loss, self.canvas.copy(), phase

    def run(self, sink: Optional[Callable] = None) -> tuple:
        """Drive to completion. Returns (final canvas, trajectory)."""
        trajectory = []
        while not self.finished:
            iteration, loss, snapshot, phase = self.step_once()
            trajectory.append((iteration, loss, phase))
            if sink is not None:
                sink(iteration, loss, snapshot)
        return self.canvas, trajectory


def run_dream(
    net: Network,
    source: Tensor,
    guide: Optional[Tensor],
    schedule: Sequence[DreamConfig],
    sink: Optional[Callable] = None,
) -> tuple:
    """Execute a whole schedule. Returns (final canvas, loss trajectory)."""
    return DreamSession(net, source, guide, schedule).run(sink)


def apply_live_patch(session: DreamSession, patch: dict) -> int:
    """Module-level alias; see DreamSession.apply_live_patch."""
    return session.apply_live_patch(patch)


def hone_in_loop(
    session: DreamSession,
    guide_tiles: Optional[Manifest],
    inner_lr: float,
    inner_steps: int,
    sink: Optional[Callable] = None,
) -> Network:
    """Run the session with classifier training interleaved between iterations.

    After every iteration except the last, takes inner_steps full-batch SGD
    steps on the guide tiles; later dream steps see the updated weights.
    inner_steps = 0 reproduces a plain run bit-exactly.
    Returns the final network; training history is visible via session.net.
    """
    if inner_steps < 0:
        raise InputError(f"inner_steps must be >= 0, got {inner_steps}")
    if inner_steps > 0:
        if guide_tiles is None or not guide_tiles.records:
            raise InputError("in-loop training requires a non-empty tile set")
        x, y = load_dataset(guide_tiles)
    while not session.finished:
        step = session.step_once()
        if sink is not None:
            sink(step[0], step[1], step[2])
        if inner_steps > 0 and not session.finished:
            ops = session.net.ops()
            for _ in range(inner_steps):
                ops, _, _ = sgd_step(ops, x, y, inner_lr)
            session.set_net(session.net.with_ops(ops))
    return session.net
