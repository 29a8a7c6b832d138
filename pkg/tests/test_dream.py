from pathlib import Path

import numpy as np
import pytest

import dreamhone.dream as dream_mod
from dreamhone.dream import (
    DreamConfig,
    DreamSession,
    LossMode,
    PatchGrid,
    apply_live_patch,
    config_from_dict,
    dream_gradient,
    dream_loss,
    dream_step,
    encode_patches,
    hone_in_loop,
    match_patches,
    run_dream,
    schedule_from_json,
)
from dreamhone.errors import InputError, ShapeError, UnknownLayerError
from dreamhone.imageio import load_image
from dreamhone.network import LayerSpec, Network, build_reference_net, forward_logits_batch
from dreamhone.tensor_core import ConvParams, Tensor
from dreamhone.tiling import TilingConfig, build_manifest, load_dataset

FIXTURES = Path(__file__).parent / "fixtures"


# ---------------------------------------------------------------------------
# oracle: exhaustive per-pair scan with elementwise sums, no vectorized tricks


def brute_force_match(canvas_patches, guide_patches, mode):
    assignment = []
    selected = []
    for s in canvas_patches:
        best_j, best_score = None, None
        for j, g in enumerate(guide_patches):
            if mode is LossMode.DotMax:
                score = np.sum(s * g)
                better = best_score is None or score > best_score
            else:
                score = np.sum((s - g) ** 2)
                better = best_score is None or score < best_score
            if better:
                best_j, best_score = j, score
        assignment.append(best_j)
        selected.append(best_score)
    return np.array(assignment), float(np.sum(np.array(selected), dtype=np.float64))


def grid_of(patches, p=1, layer="conv1"):
    n = patches.shape[0]
    return PatchGrid(layer, p, (1, n), np.ascontiguousarray(patches))


@pytest.fixture(scope="module")
def net():
    return build_reference_net(3, seed=0)


@pytest.fixture(scope="module")
def stripes():
    return load_image(FIXTURES / "stripes_64.png")


@pytest.fixture(scope="module")
def checker():
    return load_image(FIXTURES / "checker_64.png")


class TestEncodePatches:
    def test_constant_image_identical_patches(self, rng):
        # pad-free net: constant input stays constant through every layer
        w = rng.normal(0, 0.5, size=(4, 3, 1, 1)).astype(np.float32)
        conv = ConvParams(4, 3, 1, 1, 1, 0, Tensor.from_array(w), Tensor.zeros((4,)))
        from dreamhone.tensor_core import PoolParams, Relu

        tiny = Network(
            (3, 16, 16),
            [
                LayerSpec("conv", "c", conv),
                LayerSpec("relu", "r", Relu()),
                LayerSpec("maxpool", "p", PoolParams(2, 2)),
            ],
        )
        img = Tensor.from_array(np.full((3, 16, 16), 0.4, dtype=np.float32))
        for layer in ("c", "r", "p"):
            grid = encode_patches(tiny, img, layer, 2)
            assert np.all(grid.patches == grid.patches[0][None, :])

    def test_constant_image_interior_patches_identical(self, net):
        # zero padding perturbs the one-activation border; interior patches
        # of a padded conv are still all equal on a constant image
        img = Tensor.from_array(np.full((3, 64, 64), 0.4, dtype=np.float32))
        grid = encode_patches(net, img, "conv2", 4)
        rows, cols = grid.grid_dims
        inner = grid.patches.reshape(rows, cols, -1)[1 : rows - 1, 1 : cols - 1]
        flat = inner.reshape(-1, grid.patches.shape[1])
        assert np.all(flat == flat[0][None, :])

    def test_patch_size_one_is_per_column(self, net, stripes):
        grid = encode_patches(net, stripes, "pool1", 1)
        assert grid.grid_dims == (32, 32)
        assert grid.patches.shape == (32 * 32, 16)

    def test_floor_grid_drops_trailing(self, net, stripes):
        grid = encode_patches(net, stripes, "conv1", 5)
        assert grid.grid_dims == (12, 12)
        assert grid.patches.shape == (144, 16 * 25)

    def test_patch_too_large(self, net, stripes):
        with pytest.raises(InputError):
            encode_patches(net, stripes, "pool2", 17)

    def test_channel_major_flattening(self, net):
        # layer choice where activations are just the input: identity conv
        eye = np.zeros((3, 3, 1, 1), dtype=np.float32)
        for i in range(3):
            eye[i, i, 0, 0] = 1.0
        conv = ConvParams(3, 3, 1, 1, 1, 0, Tensor.from_array(eye), Tensor.zeros((3,)))
        tiny = Network((3, 4, 4), [LayerSpec("conv", "c", conv)])
        img = Tensor.from_array(np.arange(48, dtype=np.float32).reshape(3, 4, 4) / 48)
        grid = encode_patches(tiny, img, "c", 2)
        want = img.array[:, 0:2, 0:2].reshape(-1)  # channel index slowest
        np.testing.assert_array_equal(grid.patches[0], want)


class TestMatchPatches:
    def test_equal_grids_distmin_zero(self, rng):
        p = rng.random((9, 12), dtype=np.float32)
        a, loss = match_patches(grid_of(p), grid_of(p.copy()), LossMode.DistMin)
        assert loss == 0.0
        d2 = ((p[:, None, :] - p[None, :, :]) ** 2).sum(-1)
        np.testing.assert_array_equal(a, d2.argmin(axis=1))

    def test_single_pair(self, rng):
        s = rng.random((1, 8), dtype=np.float32)
        g = rng.random((1, 8), dtype=np.float32)
        a, dot_loss = match_patches(grid_of(s), grid_of(g), LossMode.DotMax)
        assert list(a) == [0]
        assert dot_loss == pytest.approx(float(np.sum(s[0] * g[0])), rel=1e-6)
        a, dist_loss = match_patches(grid_of(s), grid_of(g), LossMode.DistMin)
        assert list(a) == [0]
        assert dist_loss == pytest.approx(float(np.sum((s[0] - g[0]) ** 2)), rel=1e-6)

    def test_matches_brute_force_both_modes(self, rng):
        for trial in range(30):
            n_c = int(rng.integers(1, 17))
            n_g = int(rng.integers(1, 17))
            length = int(rng.integers(1, 65))
            cp = rng.random((n_c, length), dtype=np.float32)
            gp = rng.random((n_g, length), dtype=np.float32)
            for mode in LossMode:
                a, loss = match_patches(grid_of(cp), grid_of(gp), mode)
                a_ref, loss_ref = brute_force_match(cp, gp, mode)
                np.testing.assert_array_equal(a, a_ref)
                assert loss == loss_ref

    def test_ties_break_to_lowest_guide_index(self):
        s = np.ones((1, 4), dtype=np.float32)
        g = np.stack([np.ones(4), np.ones(4)]).astype(np.float32)
        for mode in LossMode:
            a, _ = match_patches(grid_of(s), grid_of(g), mode)
            assert a[0] == 0

    def test_vector_length_mismatch(self, rng):
        with pytest.raises(ShapeError):
            match_patches(
                grid_of(rng.random((2, 8), dtype=np.float32)),
                grid_of(rng.random((2, 9), dtype=np.float32)),
                LossMode.DotMax,
            )


class TestDreamStep:
    def test_distmin_fixed_point(self, net, stripes):
        cfg = DreamConfig(layer_name="conv2", mode=LossMode.DistMin, jitter=0, guide_blend=1.0)
        guide_grid = encode_patches(net, stripes, cfg.layer_name, cfg.patch_size)
        loss, grad = dream_gradient(net, stripes, guide_grid, cfg)
        assert loss == 0.0
        assert float(np.linalg.norm(grad.array)) <= 1e-6
        out, step_loss = dream_step(net, stripes, guide_grid, cfg, np.random.default_rng(0))
        assert step_loss == 0.0
        np.testing.assert_allclose(out.array, stripes.array, atol=1e-6)

    def test_dotmax_single_step_ascends(self, net, stripes, checker):
        cfg = DreamConfig(
            layer_name="conv2", mode=LossMode.DotMax, step_size=1e-4, jitter=0, clamp=False
        )
        guide_grid = encode_patches(net, checker, cfg.layer_name, cfg.patch_size)
        before = dream_loss(net, stripes, guide_grid, cfg)
        out, _ = dream_step(net, stripes, guide_grid, cfg, np.random.default_rng(0))
        after = dream_loss(net, out, guide_grid, cfg)
        assert after >= before
        # positive directional derivative per unit step
        assert (after - before) / cfg.step_size > 0

    def test_deterministic_per_seed(self, net, stripes, checker):
        cfg = DreamConfig(layer_name="conv1", mode=LossMode.DistMin, jitter=3)
        guide_grid = encode_patches(net, checker, cfg.layer_name, cfg.patch_size)
        a, _ = dream_step(net, stripes, guide_grid, cfg, np.random.default_rng(7))
        b, _ = dream_step(net, stripes, guide_grid, cfg, np.random.default_rng(7))
        assert a.array.tobytes() == b.array.tobytes()

    def test_clamp_keeps_unit_range(self, net, stripes, checker):
        cfg = DreamConfig(layer_name="conv1", mode=LossMode.DotMax, step_size=0.5, jitter=2)
        guide_grid = encode_patches(net, checker, cfg.layer_name, cfg.patch_size)
        canvas = stripes
        rng = np.random.default_rng(3)
        for _ in range(5):
            canvas, _ = dream_step(net, canvas, guide_grid, cfg, rng)
            assert canvas.array.min() >= 0.0
            assert canvas.array.max() <= 1.0

    def test_blend_zero_needs_no_guide(self, net, stripes):
        cfg = DreamConfig(layer_name="conv2", guide_blend=0.0, jitter=0)
        out, loss = dream_step(net, stripes, None, cfg, np.random.default_rng(0))
        assert loss > 0  # sum of squared activations of a non-dead layer
        assert out.dims == stripes.dims

    def test_scale_equivariant_assignment_linear_prefix(self, rng):
        # conv with zero bias is linear; scaling canvas+guide together must
        # not change the DistMin assignment
        w = rng.normal(0, 0.5, size=(4, 3, 3, 3)).astype(np.float32)
        conv = ConvParams(4, 3, 3, 3, 1, 1, Tensor.from_array(w), Tensor.zeros((4,)))
        lin = Network((3, 16, 16), [LayerSpec("conv", "c", conv)])
        canvas = Tensor.from_array(rng.random((3, 16, 16), dtype=np.float32))
        guide = Tensor.from_array(rng.random((3, 16, 16), dtype=np.float32))
        a1, _ = match_patches(
            encode_patches(lin, canvas, "c", 2), encode_patches(lin, guide, "c", 2), LossMode.DistMin
        )
        half = lambda t: Tensor.from_array(t.array * 0.5)
        a2, _ = match_patches(
            encode_patches(lin, half(canvas), "c", 2),
            encode_patches(lin, half(guide), "c", 2),
            LossMode.DistMin,
        )
        np.testing.assert_array_equal(a1, a2)


class TestRunDream:
    def test_zero_iterations_identity(self, net, stripes, checker):
        cfg = DreamConfig(layer_name="conv2", iterations=0)
        out, traj = run_dream(net, stripes, checker, [cfg])
        assert traj == []
        np.testing.assert_array_equal(out.array, stripes.array)

    def test_trajectory_reproducible(self, net, stripes, checker):
        sched = [DreamConfig(layer_name="conv2", iterations=4, seed=5)]
        _, t1 = run_dream(net, stripes, checker, sched)
        _, t2 = run_dream(net, stripes, checker, sched)
        assert t1 == t2
        assert [i for i, _, _ in t1] == [1, 2, 3, 4]

    def test_two_phase_guide_reencoded_twice(self, net, stripes, checker, monkeypatch):
        calls = []
        real = dream_mod.encode_patches

        def counting(net_, img, layer, p):
            calls.append(layer)
            return real(net_, img, layer, p)

        monkeypatch.setattr(dream_mod, "encode_patches", counting)
        sched = [
            DreamConfig(layer_name="conv3", iterations=2),
            DreamConfig(layer_name="conv1", iterations=2),
        ]
        run_dream(net, stripes, checker, sched)
        assert calls == ["conv3", "conv1"]

    def test_sink_called_per_iteration(self, net, stripes, checker):
        seen = []
        sched = [DreamConfig(layer_name="conv1", iterations=3)]
        run_dream(net, stripes, checker, sched, sink=lambda i, l, c: seen.append((i, c.dims)))
        assert [i for i, _ in seen] == [1, 2, 3]
        assert all(d == (3, 64, 64) for _, d in seen)

    def test_guide_required_when_blended(self, net, stripes):
        with pytest.raises(InputError):
            run_dream(net, stripes, None, [DreamConfig(layer_name="conv1", guide_blend=1.0)])

    def test_mismatched_dims_rejected(self, net, checker):
        with pytest.raises(ShapeError):
            run_dream(net, Tensor.zeros((3, 32, 32)), checker, [DreamConfig(layer_name="conv1")])


class TestLivePatch:
    def make_session(self, net, stripes, checker, iters=6):
        sched = [DreamConfig(layer_name="conv2", iterations=iters, seed=2)]
        return DreamSession(net, stripes, checker, sched)

    def test_patch_applies_at_next_boundary(self, net, stripes, checker):
        plain = self.make_session(net, stripes, checker)
        frames_plain = {}
        while not plain.finished:
            i, loss, canvas, _ = plain.step_once()
            frames_plain[i] = canvas.array.tobytes()

        patched = self.make_session(net, stripes, checker)
        boundary = None
        frames_patched = {}
        while not patched.finished:
            step = patched.step_once()
            i, loss, canvas, _ = step
            frames_patched[i] = canvas.array.tobytes()
            if i == 3:
                boundary = apply_live_patch(patched, {"step_size": 0.4})
        assert boundary == 4
        for k in (1, 2, 3):
            assert frames_patched[k] == frames_plain[k]
        assert frames_patched[4] != frames_plain[4]

    def test_empty_patch_no_effect(self, net, stripes, checker):
        s = self.make_session(net, stripes, checker)
        s.step_once()
        ack = apply_live_patch(s, {})
        assert ack == 2
        assert s.active_config.step_size == DreamConfig(layer_name="x").step_size

    def test_unknown_layer_rejected_session_lives(self, net, stripes, checker):
        s = self.make_session(net, stripes, checker)
        s.step_once()
        with pytest.raises(UnknownLayerError):
            apply_live_patch(s, {"layer_name": "nope"})
        assert s.step_once() is not None  # still advancing

    def test_out_of_range_rejected(self, net, stripes, checker):
        s = self.make_session(net, stripes, checker)
        with pytest.raises(InputError):
            apply_live_patch(s, {"step_size": -1})
        with pytest.raises(InputError):
            apply_live_patch(s, {"guide_blend": 1.5})
        with pytest.raises(InputError):
            apply_live_patch(s, {"iterations": 3})

    def test_layer_patch_reencodes_guide(self, net, stripes, checker, monkeypatch):
        s = self.make_session(net, stripes, checker)
        calls = []
        real = dream_mod.encode_patches
        monkeypatch.setattr(
            dream_mod, "encode_patches", lambda n, i, l, p: (calls.append(l), real(n, i, l, p))[1]
        )
        s.step_once()
        apply_live_patch(s, {"layer_name": "conv1"})
        s.step_once()
        assert calls == ["conv1"]

    def test_last_writer_wins_per_field(self, net, stripes, checker):
        s = self.make_session(net, stripes, checker)
        apply_live_patch(s, {"step_size": 0.2, "jitter": 0})
        apply_live_patch(s, {"step_size": 0.3})
        s.step_once()
        assert s.active_config.step_size == pytest.approx(0.3)
        assert s.active_config.jitter == 0

    def test_patch_after_finish_rejected(self, net, stripes, checker):
        s = self.make_session(net, stripes, checker, iters=1)
        s.step_once()
        with pytest.raises(InputError):
            apply_live_patch(s, {"step_size": 0.2})


@pytest.fixture(scope="module")
def tile_manifest(tmp_path_factory):
    from conftest import build_texture_corpus

    root = build_texture_corpus(tmp_path_factory.mktemp("hone"), n_per_cat=1, size=64)
    cfg = TilingConfig(tiles_per_level=(4,), min_tile=16)
    m = build_manifest(root, cfg, seed=1)
    m.records[:] = m.records[:10]
    return m


class TestHoneInLoop:
    def test_zero_lr_bit_identical_to_plain_run(self, net, stripes, checker, tile_manifest):
        sched = [DreamConfig(layer_name="conv2", iterations=3, seed=1)]
        plain, _ = run_dream(net, stripes, checker, sched)
        s = DreamSession(net, stripes, checker, sched)
        hone_in_loop(s, tile_manifest, inner_lr=0.0, inner_steps=2)
        assert s.canvas.array.tobytes() == plain.array.tobytes()

    def test_zero_steps_bit_identical_no_tiles_needed(self, net, stripes, checker):
        sched = [DreamConfig(layer_name="conv2", iterations=3, seed=1)]
        plain, _ = run_dream(net, stripes, checker, sched)
        s = DreamSession(net, stripes, checker, sched)
        hone_in_loop(s, None, inner_lr=0.1, inner_steps=0)
        assert s.canvas.array.tobytes() == plain.array.tobytes()

    def test_inner_training_reduces_tile_loss(self, net, stripes, checker, tile_manifest):
        x, y = load_dataset(tile_manifest)

        def ce_loss(model):
            logits = forward_logits_batch(model, x)
            z = logits - logits.max(axis=1, keepdims=True)
            logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
            return float(-logp[np.arange(len(y)), y].mean())

        sched = [DreamConfig(layer_name="conv2", iterations=2, seed=1)]
        s = DreamSession(net, stripes, checker, sched)
        before = ce_loss(net)
        new_net = hone_in_loop(s, tile_manifest, inner_lr=0.01, inner_steps=10)
        after = ce_loss(new_net)
        assert after < before

    def test_weights_change_dream_outcome(self, net, stripes, checker, tile_manifest):
        sched = [DreamConfig(layer_name="conv2", iterations=3, seed=1)]
        plain, _ = run_dream(net, stripes, checker, sched)
        s = DreamSession(net, stripes, checker, sched)
        hone_in_loop(s, tile_manifest, inner_lr=0.05, inner_steps=5)
        assert s.canvas.array.tobytes() != plain.array.tobytes()

    def test_empty_tiles_with_steps_rejected(self, net, stripes, checker):
        from dreamhone.tiling import Manifest

        empty = Manifest(categories=["a"], records=[], tile_out_size=(64, 64), seed=0, root=None)
        s = DreamSession(net, stripes, checker, [DreamConfig(layer_name="conv2", iterations=1)])
        with pytest.raises(InputError):
            hone_in_loop(s, empty, inner_lr=0.1, inner_steps=1)

    def test_deterministic_combined_run(self, net, stripes, checker, tile_manifest):
        sched = [DreamConfig(layer_name="conv2", iterations=3, seed=9)]
        outs = []
        for _ in range(2):
            s = DreamSession(net, stripes, checker, sched)
            hone_in_loop(s, tile_manifest, inner_lr=0.02, inner_steps=3)
            outs.append(s.canvas.array.tobytes())
        assert outs[0] == outs[1]


class TestConfigParsing:
    def test_schedule_from_json(self):
        sched = schedule_from_json(
            [
                {"layer_name": "conv1", "iterations": 5, "mode": "DotMax", "step_size": 0.1},
                {"layer_name": "conv3", "iterations": 2},
            ]
        )
        assert len(sched) == 2
        assert sched[0].mode is LossMode.DotMax
        assert sched[1].iterations == 2

    def test_bad_mode_string(self):
        with pytest.raises(InputError):
            config_from_dict({"layer_name": "conv1", "mode": "Fuzzy"})

    def test_unknown_field(self):
        with pytest.raises(InputError):
            config_from_dict({"layer_name": "conv1", "velocity": 3})

    def test_requires_layer_name(self):
        with pytest.raises(InputError):
            config_from_dict({"step_size": 0.1})

    def test_ranges_enforced(self):
        for bad in (
            {"layer_name": "c", "step_size": 0},
            {"layer_name": "c", "iterations": -1},
            {"layer_name": "c", "patch_size": 0},
            {"layer_name": "c", "jitter": -2},
            {"layer_name": "c", "guide_blend": 2.0},
        ):
            with pytest.raises(InputError):
                config_from_dict(bad)
