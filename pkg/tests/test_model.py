import math

import numpy as np
import pytest
import torch

from pickplace import simulator
from pickplace.encoders import ConfigurationError, ToyBackbone
from pickplace.geometry import (DEFAULT_FRAME, Observation, PixelPose,
                                extract_rotated_crops)
from pickplace.model import (AffordanceMaps, AffordanceModel, HadamardGate,
                             LateralFuse, ModelConfig, ModelError,
                             audit_normalization_free, correlate_torch,
                             cross_correlate, select_action,
                             trainable_module_types)

MINI = ModelConfig(crop_size=8, k_place=4, corr_dim=2,
                   spatial_channels=(6, 8, 8, 6), decoder_widths=(12, 10, 8),
                   query_channels=(6, 8, 10, 12), query_decoder_widths=(10, 8, 6))


def mini_obs(seed=0, size=16):
    frame = simulator.WorkspaceFrame(0, size * 0.0039, 0, size * 0.0039, 0, 0.3,
                                     0.0039)
    rng = np.random.default_rng(seed)
    return Observation(
        color=rng.random((size, size, 3)).astype(np.float32),
        height=(rng.random((size, size)) * 0.05).astype(np.float32),
        frame=frame)


def brute_force_correlation(kernel, key):
    ch, cw, d = kernel.shape
    h, w, _ = key.shape
    out = np.zeros((h, w), dtype=np.float64)
    for u in range(h):
        for v in range(w):
            acc = 0.0
            for a in range(ch):
                for b in range(cw):
                    su, sv = u + a - ch // 2, v + b - cw // 2
                    if 0 <= su < h and 0 <= sv < w:
                        acc += float(np.dot(kernel[a, b], key[su, sv]))
            out[u, v] = acc
    return out


class TestCrossCorrelate:
    def test_impulse_identity(self):
        key = np.random.default_rng(0).random((9, 9, 1))
        kernel = np.zeros((3, 3, 1))
        kernel[1, 1, 0] = 1.0
        np.testing.assert_allclose(cross_correlate(kernel, key), key[:, :, 0])

    def test_zero_kernel(self):
        key = np.random.default_rng(0).random((6, 6, 2))
        assert np.all(cross_correlate(np.zeros((4, 4, 2)), key) == 0.0)

    def test_small_integer_exact(self):
        rng = np.random.default_rng(1)
        kernel = rng.integers(-5, 6, (3, 3, 2)).astype(np.float64)
        key = rng.integers(-5, 6, (5, 5, 2)).astype(np.float64)
        out = cross_correlate(kernel, key)
        np.testing.assert_array_equal(out, brute_force_correlation(kernel, key))

    def test_random_double_1e10(self):
        rng = np.random.default_rng(2)
        kernel = rng.standard_normal((4, 4, 3))
        key = rng.standard_normal((8, 8, 3))
        out = cross_correlate(kernel, key)
        np.testing.assert_allclose(out, brute_force_correlation(kernel, key),
                                   atol=1e-10)

    def test_kernel_larger_than_key(self):
        with pytest.raises(ModelError):
            cross_correlate(np.zeros((8, 8, 1)), np.zeros((4, 4, 1)))


class TestCorrelateTorch:
    @pytest.mark.parametrize("method", ["fft", "direct"])
    def test_matches_reference(self, method):
        rng = np.random.default_rng(3)
        kernels = rng.standard_normal((5, 3, 8, 8)).astype(np.float32)
        key = rng.standard_normal((1, 3, 24, 24)).astype(np.float32)
        out = correlate_torch(torch.from_numpy(kernels), torch.from_numpy(key),
                              method=method).numpy()
        for i in range(5):
            ref = cross_correlate(kernels[i].transpose(1, 2, 0).astype(np.float64),
                                  key[0].transpose(1, 2, 0).astype(np.float64))
            np.testing.assert_allclose(out[i], ref, atol=1e-3)

    def test_fft_equals_direct_default_shape(self):
        rng = np.random.default_rng(4)
        kernels = torch.from_numpy(
            rng.standard_normal((36, 3, 64, 64)).astype(np.float32))
        key = torch.from_numpy(
            rng.standard_normal((1, 3, 128, 128)).astype(np.float32))
        fft = correlate_torch(kernels, key, "fft")
        direct = correlate_torch(kernels, key, "direct")
        assert float((fft - direct).abs().max()) < 5e-3


class TestConditioning:
    def test_all_ones_gate_is_identity(self):
        gate = HadamardGate(8, 5)
        with torch.no_grad():
            gate.proj.weight.zero_()
            gate.proj.bias.fill_(1.0)
        v = torch.randn(1, 5, 4, 4)
        assert torch.equal(gate(v, torch.randn(1, 8)), v)

    def test_all_zeros_gate_annihilates(self):
        gate = HadamardGate(8, 5)
        with torch.no_grad():
            gate.proj.weight.zero_()
            gate.proj.bias.zero_()
        v = torch.randn(1, 5, 4, 4)
        assert torch.all(gate(v, torch.randn(1, 8)) == 0.0)

    def test_matches_loop_oracle(self):
        gate = HadamardGate(6, 8)
        v = torch.randn(1, 8, 4, 4)
        g = torch.randn(1, 6)
        out = gate(v, g).detach().numpy()
        proj = gate.proj(g).detach().numpy()[0]
        for c in range(8):
            for a in range(4):
                for b in range(4):
                    assert out[0, c, a, b] == pytest.approx(
                        v[0, c, a, b].item() * proj[c], rel=1e-6)


class TestLateralFuse:
    def test_degenerate_identity(self):
        fuse = LateralFuse(4, 0)
        with torch.no_grad():
            fuse.conv.weight.copy_(torch.eye(4).reshape(4, 4, 1, 1))
            fuse.conv.bias.zero_()
        sem = torch.randn(1, 4, 3, 3)
        out = fuse(sem, torch.zeros(1, 0, 3, 3))
        assert torch.allclose(out, sem)

    def test_spatial_shape_preserved(self):
        fuse = LateralFuse(6, 3)
        out = fuse(torch.randn(2, 6, 9, 13), torch.randn(2, 3, 9, 13))
        assert out.shape == (2, 6, 9, 13)

    def test_matches_per_pixel_matmul(self):
        fuse = LateralFuse(3, 2)
        sem = torch.randn(1, 3, 2, 2)
        spa = torch.randn(1, 2, 2, 2)
        out = fuse(sem, spa).detach().numpy()
        w = fuse.conv.weight.detach().numpy()[:, :, 0, 0]
        b = fuse.conv.bias.detach().numpy()
        x = torch.cat([sem, spa], 1).numpy()
        for a in range(2):
            for c in range(2):
                np.testing.assert_allclose(out[0, :, a, c],
                                           w @ x[0, :, a, c] + b, rtol=1e-5)

    def test_shape_mismatch_raises(self):
        fuse = LateralFuse(3, 2)
        with pytest.raises(ModelError):
            fuse(torch.randn(1, 3, 4, 4), torch.randn(1, 2, 8, 8))


class TestSelectAction:
    def test_unique_max(self):
        q_pick = np.zeros((8, 8, 1))
        q_pick[3, 7, 0] = 1.0
        q_place = np.zeros((8, 8, 4))
        q_place[2, 5, 3] = 2.0
        action = select_action(AffordanceMaps(q_pick, q_place))
        assert (action.pick.u, action.pick.v) == (3, 7)
        assert (action.place.u, action.place.v, action.place.rot) == (2, 5, 3)

    def test_tie_breaks_to_lowest_flat_index(self):
        maps = AffordanceMaps(np.zeros((4, 4, 1)), np.zeros((4, 4, 3)))
        action = select_action(maps)
        assert (action.pick.u, action.pick.v, action.pick.rot) == (0, 0, 0)
        assert (action.place.u, action.place.v, action.place.rot) == (0, 0, 0)

    def test_matches_exhaustive_scan(self, rng):
        q_pick = rng.standard_normal((6, 7, 2))
        q_place = rng.standard_normal((6, 7, 5))
        action = select_action(AffordanceMaps(q_pick, q_place))
        best = max(((u, v, r) for u in range(6) for v in range(7)
                    for r in range(5)), key=lambda t: q_place[t])
        assert (action.place.u, action.place.v, action.place.rot) == best

    def test_non_finite_raises(self):
        q = np.zeros((4, 4, 1))
        q[0, 0, 0] = np.nan
        with pytest.raises(ModelError):
            select_action(AffordanceMaps(q, np.zeros((4, 4, 2))))

    def test_normalized_maps_sum_to_one(self, rng):
        maps = AffordanceMaps(rng.standard_normal((8, 8, 1)),
                              rng.standard_normal((8, 8, 4)))
        v_pick, v_place = maps.normalized()
        assert v_pick.sum() == pytest.approx(1.0, abs=1e-6)
        assert v_place.sum() == pytest.approx(1.0, abs=1e-6)


class TestConfig:
    def test_defaults_match_contract(self):
        cfg = ModelConfig()
        assert (cfg.crop_size, cfg.k_place, cfg.corr_dim) == (64, 36, 3)
        assert cfg.k_pick == 1

    def test_spatial_only_rejects_language(self):
        with pytest.raises(ConfigurationError):
            ModelConfig(stream_mode="spatial_only", goal_mode="language")

    def test_roundtrip(self):
        cfg = ModelConfig(stream_mode="semantic_only", k_pick=4)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg

    def test_three_decoder_layers_enforced(self):
        with pytest.raises(ConfigurationError):
            ModelConfig(decoder_widths=(8, 8))


@pytest.fixture(scope="module")
def mini_model():
    torch.manual_seed(0)
    return AffordanceModel(MINI)


class TestForward:
    def test_output_shapes_default_config(self):
        torch.manual_seed(0)
        model = AffordanceModel(ModelConfig())
        state, obs, goal = simulator.reset("put-blocks-in-bowls", "seen", 0)
        q_pick = model.forward_pick(obs, "put the red blocks in a blue bowl")
        assert q_pick.shape == (128, 128, 1)
        q_place = model.forward_place(obs, "put the red blocks in a blue bowl",
                                      PixelPose(40, 40))
        assert q_place.shape == (128, 128, 36)

    def test_spatial_only_ignores_instruction(self):
        torch.manual_seed(0)
        model = AffordanceModel(ModelConfig(stream_mode="spatial_only",
                                            goal_mode="none"))
        obs = mini_obs(size=128)
        a = model.forward_pick(obs, "put the red blocks in a blue bowl")
        b = model.forward_pick(obs, "a completely different instruction")
        np.testing.assert_array_equal(a, b)

    def test_semantic_only_forward(self, mini_model):
        torch.manual_seed(0)
        cfg = ModelConfig(stream_mode="semantic_only", crop_size=8, k_place=4,
                          corr_dim=2, decoder_widths=(12, 10, 8),
                          query_decoder_widths=(10, 8, 6))
        model = AffordanceModel(cfg)
        obs = mini_obs()
        maps = model.affordances(obs, "move the red ring to the middle peg")
        assert maps.q_pick.shape == (16, 16, 1)
        assert maps.q_place.shape == (16, 16, 4)

    def test_image_goal_forward(self):
        torch.manual_seed(0)
        cfg = ModelConfig(goal_mode="image_goal", crop_size=8, k_place=4,
                          corr_dim=2, spatial_channels=(6, 8, 8, 6),
                          decoder_widths=(12, 10, 8),
                          query_channels=(6, 8, 10, 12),
                          query_decoder_widths=(10, 8, 6))
        model = AffordanceModel(cfg)
        obs, goal_obs = mini_obs(0), mini_obs(1)
        maps = model.affordances(obs, None, goal_obs=goal_obs)
        assert maps.q_place.shape == (16, 16, 4)
        with pytest.raises(ModelError):
            model.forward_place(obs, None, PixelPose(4, 4))

    def test_missing_instruction_raises(self, mini_model):
        with pytest.raises(ModelError):
            mini_model.forward_pick(mini_obs(), None)

    def test_rotator_config(self):
        torch.manual_seed(0)
        cfg = ModelConfig(k_pick=4, crop_size=8, k_place=4, corr_dim=2,
                          spatial_channels=(6, 8, 8, 6), decoder_widths=(12, 10, 8),
                          query_channels=(6, 8, 10, 12),
                          query_decoder_widths=(10, 8, 6))
        model = AffordanceModel(cfg)
        obs = mini_obs()
        q_pick = model.forward_pick(obs, "move the red ring to the middle peg")
        assert q_pick.shape == (16, 16, 4)
        action = model.act(obs, "move the red ring to the middle peg")
        assert action.pick.k == 4

    def test_pick_out_of_bounds(self, mini_model):
        with pytest.raises(ModelError):
            mini_model.forward_place(mini_obs(), "move the ring", PixelPose(99, 0))


class TestEquivariance:
    def test_spatial_only_field_shift_is_exact(self):
        torch.manual_seed(1)
        model = AffordanceModel(ModelConfig(stream_mode="spatial_only",
                                            goal_mode="none"))
        frame = DEFAULT_FRAME
        rng = np.random.default_rng(5)
        color = np.zeros((128, 128, 3), np.float32)
        height = np.zeros((128, 128), np.float32)
        color[54:74, 50:70] = rng.random((20, 20, 3)).astype(np.float32)
        height[54:74, 50:70] = 0.04
        obs = Observation(color, height, frame)
        q0 = model.forward_pick(obs)[:, :, 0]
        du, dv = 9, -7
        shifted = Observation(np.roll(color, (du, dv), (0, 1)),
                              np.roll(height, (du, dv), (0, 1)), frame)
        q1 = model.forward_pick(shifted)[:, :, 0]
        # Interior window around content: exact equality after the shift.
        win0 = q0[40:90, 35:85]
        win1 = q1[40 + du:90 + du, 35 + dv:85 + dv]
        np.testing.assert_array_equal(win0, win1)


def rotation_fixture(rng, size=96, radius=14, channels=2):
    """Zero-mean smooth oriented pattern centered on an integer pixel."""
    from scipy.ndimage import gaussian_filter
    base = np.zeros((size, size, channels))
    c = size // 2 - 1
    field = gaussian_filter(rng.standard_normal((size, size, channels)),
                            sigma=(1.5, 1.5, 0))
    field -= field.mean(axis=(0, 1))
    uu, vv = np.meshgrid(np.arange(size) - c, np.arange(size) - c, indexing="ij")
    taper = np.clip(1.0 - np.hypot(uu, vv) / radius, 0.0, 1.0)
    base = field * taper[:, :, None]
    return base, (c, c)


class TestRotationConsistency:
    @pytest.mark.parametrize("k", [4, 36])
    def test_planted_rotation_recovered(self, k):
        # Key contains the query content rotated by theta_j: the argmax over
        # (bin, pixel) of the correlation stack must recover bin j.
        from pickplace.geometry import rotate_map
        rng = np.random.default_rng(7)
        base, center = rotation_fixture(rng)
        crops = extract_rotated_crops(base, center, 32, k)
        trials = [1, k // 3, k // 2, k - 1]
        hits = 0
        for j in trials:
            key = rotate_map(base, j * 2 * math.pi / k, center)
            scores = np.stack([cross_correlate(crops[i], key) for i in range(k)])
            r, _, _ = np.unravel_index(np.argmax(scores), scores.shape)
            if r == j:
                hits += 1
        assert hits >= len(trials) - (1 if k == 36 else 0)


class TestStructure:
    def test_no_normalization_layers(self, mini_model):
        assert audit_normalization_free(mini_model) == []

    def test_trainable_blocks_are_conv_linear_only(self, mini_model):
        kinds = trainable_module_types(mini_model)
        assert kinds <= {torch.nn.Conv2d, torch.nn.Linear}

    def test_frozen_backbone_not_in_trainables(self, mini_model):
        trained = {id(p) for p in mini_model.trainable_parameters()}
        frozen = {id(p) for p in mini_model.backbone.parameters()}
        assert trained.isdisjoint(frozen)

    def test_gradients_reach_all_components(self, mini_model):
        from pickplace.dataset import TrainingPair
        from pickplace.training import Labels, loss_from_logits
        obs = mini_obs()
        pair = TrainingPair(observation=obs, instruction="move the red ring",
                            pick=PixelPose(5, 5, 0, 1),
                            place=PixelPose(9, 9, 1, 4),
                            task="t")
        mini_model.zero_grad()
        q_pick, q_place = mini_model.forward_maps(obs, pair.instruction, pair.pick)
        loss = loss_from_logits(q_pick, q_place, Labels.from_pair(pair))
        loss.backward()
        before = mini_model.backbone.checksum()
        groups = {
            "spatial": mini_model.pick_net.spatial.parameters(),
            "semantic": mini_model.pick_net.semantic.parameters(),
            "gates": mini_model.pick_net.semantic.gates.parameters(),
            "key_fuse": mini_model.key_net.fuse.parameters(),
            "query": mini_model.query_net.parameters(),
        }
        for name, params in groups.items():
            total = sum(float(p.grad.abs().sum()) for p in params
                        if p.grad is not None)
            assert total > 0, f"no gradient reached {name}"
        assert mini_model.backbone.checksum() == before


class TestCheckpointing:
    def test_roundtrip(self, mini_model, tmp_path):
        from pickplace.training import load_checkpoint, save_checkpoint
        path = save_checkpoint(mini_model, 7, tmp_path / "ckpt.pt")
        loaded, step = load_checkpoint(path)
        assert step == 7
        assert loaded.parameter_checksum() == mini_model.parameter_checksum()

    def test_config_mismatch_rejected(self, mini_model, tmp_path):
        from pickplace.training import load_checkpoint, save_checkpoint
        path = save_checkpoint(mini_model, 1, tmp_path / "ckpt.pt")
        with pytest.raises(ConfigurationError):
            load_checkpoint(path, expect_config=ModelConfig())
