import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pickplace.geometry import (DEFAULT_FRAME, GeometryError, Observation,
                                PixelPose, WorkspaceFrame, extract_rotated_crops,
                                nearest_bin, pixel_to_world, rotate_map,
                                transform_pixel, warp_se2, world_to_pixel)


def make_obs(frame=DEFAULT_FRAME, seed=0):
    rng = np.random.default_rng(seed)
    color = rng.random((frame.height, frame.width, 3)).astype(np.float32)
    height = rng.random((frame.height, frame.width)).astype(np.float32) * 0.1
    return Observation(color=color, height=height, frame=frame)


class TestFrame:
    def test_default_grid(self):
        assert DEFAULT_FRAME.height == 128
        assert DEFAULT_FRAME.width == 128

    def test_bad_pixel_size(self):
        with pytest.raises(GeometryError):
            WorkspaceFrame(0, 1, 0, 1, 0, 1, pixel_size=0)

    def test_bad_span(self):
        with pytest.raises(GeometryError):
            WorkspaceFrame(0, 1, 1, 0, 0, 1, pixel_size=0.01)


class TestPixelWorld:
    def test_corner_pixel(self):
        frame = WorkspaceFrame(0.0, 0.4992, 0.0, 0.4992, 0.0, 0.3, 0.0039)
        obs = Observation(
            color=np.zeros((frame.height, frame.width, 3), np.float32),
            height=np.zeros((frame.height, frame.width), np.float32),
            frame=frame)
        x, y, z, yaw = pixel_to_world(PixelPose(0, 0, 0, 1), obs)
        assert x == pytest.approx(0.00195)
        assert y == pytest.approx(0.00195)
        assert z == 0.0
        assert yaw == 0.0

    def test_bin_nine_of_36_is_quarter_turn(self):
        assert PixelPose(0, 0, 9, 36).angle == pytest.approx(math.pi / 2)

    def test_out_of_bounds_pixel(self):
        obs = make_obs()
        with pytest.raises(GeometryError):
            pixel_to_world(PixelPose(200, 0, 0, 1), obs)

    def test_round_trip_1000_seeded_samples(self):
        # Oracle: world_to_pixel(pixel_to_world(p)) must be the identity.
        obs = make_obs()
        rng = np.random.default_rng(42)
        for _ in range(1000):
            p = PixelPose(int(rng.integers(128)), int(rng.integers(128)),
                          int(rng.integers(36)), 36)
            x, y, _, yaw = pixel_to_world(p, obs)
            q = world_to_pixel(obs.frame, x, y, yaw, k=36)
            assert (q.u, q.v, q.rot) == (p.u, p.v, p.rot)

    @settings(max_examples=50, deadline=None)
    @given(u=st.integers(0, 63), v=st.integers(0, 63), rot=st.integers(0, 11),
           px=st.floats(0.001, 0.02))
    def test_round_trip_property(self, u, v, rot, px):
        frame = WorkspaceFrame(0.0, 64 * px, -0.1, -0.1 + 64 * px, 0.0, 0.3, px)
        obs = Observation(color=np.zeros((64, 64, 3), np.float32),
                          height=np.zeros((64, 64), np.float32), frame=frame)
        p = PixelPose(u, v, rot, 12)
        x, y, _, yaw = pixel_to_world(p, obs)
        q = world_to_pixel(frame, x, y, yaw, k=12)
        assert (q.u, q.v, q.rot) == (p.u, p.v, p.rot)

    def test_nearest_bin_wraps(self):
        assert nearest_bin(2 * math.pi - 1e-9, 36) == 0
        assert nearest_bin(math.pi / 2, 36) == 9


class TestWarp:
    def test_identity_is_bit_exact(self):
        obs = make_obs()
        out = warp_se2(obs, 0, 0, 0.0)
        assert np.array_equal(out.color, obs.color)
        assert np.array_equal(out.height, obs.height)

    def test_half_turn_twice_is_identity(self):
        obs = make_obs()
        center = (63.5, 63.5)
        once = warp_se2(obs, 0, 0, math.pi, center, color_interp="nearest")
        twice = warp_se2(once, 0, 0, math.pi, center, color_interp="nearest")
        assert np.max(np.abs(twice.color - obs.color)) < 1e-6
        assert np.max(np.abs(twice.height - obs.height)) < 1e-6

    def test_translation_moves_bright_pixel(self):
        frame = DEFAULT_FRAME
        color = np.zeros((128, 128, 3), np.float32)
        color[10, 10] = 1.0
        obs = Observation(color=color,
                          height=np.zeros((128, 128), np.float32), frame=frame)
        out = warp_se2(obs, dx=5, dy=0, dtheta=0.0)
        brightest = np.unravel_index(np.argmax(out.color.sum(axis=2)),
                                     (128, 128))
        assert brightest == (15, 10)

    def test_label_follows_content(self):
        color = np.zeros((128, 128, 3), np.float32)
        color[40, 70] = 1.0
        obs = Observation(color=color,
                          height=np.zeros((128, 128), np.float32),
                          frame=DEFAULT_FRAME)
        dx, dy, dtheta = 7, -12, math.pi / 2
        out = warp_se2(obs, dx, dy, dtheta, color_interp="nearest")
        tu, tv = transform_pixel(40, 70, dx, dy, dtheta,
                                 ((128 - 1) / 2, (128 - 1) / 2))
        u, v = int(round(tu)), int(round(tv))
        assert out.color[u, v].sum() > 2.9

    def test_out_of_support_fill(self):
        obs = make_obs()
        out = warp_se2(obs, dx=100, dy=0, dtheta=0.0)
        assert np.all(out.color[:50] == 0.0)
        assert np.all(out.height[:50] == 0.0)


def _crop_oracle(features, center, c, theta):
    """Loop-based reference: slice content rotated by +theta about center."""
    h, w, ch = features.shape
    c2 = c // 2
    out = np.zeros((c, c, ch), features.dtype)
    for a in range(c):
        for b in range(c):
            du, dv = a - c2, b - c2
            su = math.cos(-theta) * du - math.sin(-theta) * dv + center[0]
            sv = math.sin(-theta) * du + math.cos(-theta) * dv + center[1]
            u0, v0 = int(math.floor(su)), int(math.floor(sv))
            fu, fv = su - u0, sv - v0
            acc = np.zeros(ch)
            for uu, vv, wgt in ((u0, v0, (1 - fu) * (1 - fv)),
                                (u0, v0 + 1, (1 - fu) * fv),
                                (u0 + 1, v0, fu * (1 - fv)),
                                (u0 + 1, v0 + 1, fu * fv)):
                if 0 <= uu < h and 0 <= vv < w:
                    acc += wgt * features[uu, vv]
            out[a, b] = acc
    return out


class TestRotatedCrops:
    def test_k1_equals_plain_window(self):
        feats = np.random.default_rng(1).random((32, 32, 2)).astype(np.float32)
        crops = extract_rotated_crops(feats, (16, 16), 8, 1)
        assert crops.shape == (1, 8, 8, 2)
        np.testing.assert_array_equal(crops[0], feats[12:20, 12:20])

    def test_l_pattern_against_loop_oracle(self):
        feats = np.zeros((33, 33, 1), np.float32)
        feats[10:22, 14:17] = 1.0   # vertical bar
        feats[19:22, 14:24] = 1.0   # foot: an L
        crops = extract_rotated_crops(feats, (16, 16), 16, 4)
        for i, theta in enumerate([0.0, math.pi / 2, math.pi, 3 * math.pi / 2]):
            oracle = _crop_oracle(feats, (16, 16), 16, theta)
            np.testing.assert_allclose(crops[i], oracle, atol=1e-5)

    def test_corner_zero_padding(self):
        feats = np.ones((32, 32, 1), np.float32)
        crops = extract_rotated_crops(feats, (0, 0), 8, 1)
        assert np.all(crops[0, :4, :4] == 0.0)   # off-map region
        assert np.all(crops[0, 4:, 4:] == 1.0)

    def test_crop_too_large(self):
        feats = np.zeros((16, 16, 1), np.float32)
        with pytest.raises(GeometryError):
            extract_rotated_crops(feats, (8, 8), 32, 1)

    def test_odd_crop_rejected(self):
        feats = np.zeros((16, 16, 1), np.float32)
        with pytest.raises(GeometryError):
            extract_rotated_crops(feats, (8, 8), 7, 1)

    def test_commutes_with_prerotation(self):
        # Slice i equals slice 0 of the map pre-rotated by theta_i about center.
        rng = np.random.default_rng(3)
        feats = rng.random((64, 64, 3)).astype(np.float32)
        center = (32, 32)
        k = 8
        crops = extract_rotated_crops(feats, center, 16, k)
        for i in range(k):
            pre = rotate_map(feats, i * 2 * math.pi / k, center)
            direct = extract_rotated_crops(pre, center, 16, 1)[0]
            np.testing.assert_allclose(crops[i], direct, atol=1e-5)
