from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omnimixer import tensor as T
from omnimixer.errors import ConfigError, DataError
from omnimixer.geometry import (CameraPose, embed_snapshot, eval_poses, eval_view_names, eval_views,
                                extract_snapshot, from_uint8, read_png, roll_canvas, to_uint8,
                                write_png)
from omnimixer.tensor import Tensor
from reference import pattern_canvas, perspective_from_equirect

GOLDEN = Path(__file__).parent / "data" / "eval_views_golden.npz"
FRONT = CameraPose()


def psnr(a, b, peak=2.0):
    """PSNR for images in [-1, 1] (peak-to-peak range 2)."""
    return 10 * np.log10(peak ** 2 / np.mean((a - b) ** 2))


def smooth_snapshot(size=64):
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    return np.stack([0.8 * np.sin(3 * xx), 0.7 * np.cos(2 * yy + xx), 0.5 * xx * yy - 0.2])


class TestPose:
    @pytest.mark.parametrize("fov", [0.0, 180.0, 200.0])
    def test_fov_bounds(self, fov):
        with pytest.raises(ConfigError):
            CameraPose(fov_h=fov)

    def test_yaw_normalized(self):
        assert CameraPose(yaw=180.0).yaw == -180.0
        assert CameraPose(yaw=-190.0).yaw == 170.0

    def test_polar_view_needs_narrow_fov(self):
        pose = CameraPose(pitch=90.0, fov_v=180.0 - 1e-7)
        with pytest.raises(ConfigError):
            extract_snapshot(np.zeros((3, 8, 16)), pose, 4, 4)


class TestEmbed:
    def test_centre_pixel(self):
        snap = smooth_snapshot()
        snap[:, 28:36, 28:36] = np.array([0.3, -0.4, 0.1])[:, None, None]
        canvas, _ = embed_snapshot(snap, FRONT, 64)
        np.testing.assert_allclose(canvas[:, 32, 64], [0.3, -0.4, 0.1], atol=1e-12)

    def test_outside_mask_is_zero(self, rng):
        canvas, mask = embed_snapshot(rng.uniform(-1, 1, (3, 64, 64)), CameraPose(yaw=40, pitch=20), 64)
        assert set(np.unique(mask)) == {0.0, 1.0}
        assert np.all(canvas[:, mask[0] == 0] == 0.0)

    def test_mask_idempotent(self, rng):
        _, m1 = embed_snapshot(rng.uniform(-1, 1, (3, 32, 32)), FRONT, 32)
        _, m2 = embed_snapshot(rng.uniform(-1, 1, (3, 32, 32)), FRONT, 32)
        np.testing.assert_array_equal(m1, m2)

    def test_quarter_of_longitudes_at_equator(self):
        _, mask = embed_snapshot(np.zeros((3, 16, 16)), FRONT, 64)
        assert mask[0, 32].sum() == 32  # 90 degrees of 360 over 128 columns

    def test_round_trip_psnr(self):
        snap = smooth_snapshot(64)
        canvas, _ = embed_snapshot(snap, FRONT, 64)
        assert psnr(extract_snapshot(canvas, FRONT, 64, 64), snap) > 30.0

    def test_rejects_flat_input(self):
        with pytest.raises(DataError):
            embed_snapshot(np.zeros((8, 8)), FRONT, 8)


class TestExtract:
    def test_constant_canvas(self):
        views = eval_views(np.full((3, 16, 32), 0.25), 8, 8)
        for v in views:
            np.testing.assert_allclose(v, 0.25, atol=1e-15)

    def test_roll_half_equals_yaw_180(self, rng):
        canvas = rng.uniform(-1, 1, (3, 32, 64))
        a = extract_snapshot(roll_canvas(canvas, 32), CameraPose(yaw=0), 16, 16)
        b = extract_snapshot(canvas, CameraPose(yaw=180), 16, 16)
        assert np.abs(a - b).max() < 1e-6

    def test_seam_stripe(self):
        canvas = np.full((3, 32, 64), -0.5)
        canvas[:, :, :3] = 0.7
        canvas[:, :, -3:] = 0.9
        at_seam = extract_snapshot(canvas, CameraPose(yaw=-180, fov_h=60, fov_v=60), 24, 24)
        rolled = extract_snapshot(roll_canvas(canvas, 32), CameraPose(yaw=0, fov_h=60, fov_v=60), 24, 24)
        assert np.abs(at_seam - rolled).max() < 1e-6
        assert at_seam.max() > 0.8 and at_seam.min() < -0.4

    def test_against_reference_resampler(self):
        canvas = pattern_canvas(32)
        worst = 0.0
        for pose in eval_poses(75.0):
            ours = extract_snapshot(canvas, pose, 20, 20)
            ref = perspective_from_equirect(canvas, pose.yaw, pose.pitch, 75.0, 20)
            worst = max(worst, np.abs(ours - ref).max())
        assert worst < 1e-5

    def test_requires_two_to_one(self):
        with pytest.raises(DataError):
            extract_snapshot(np.zeros((3, 8, 8)), FRONT, 4, 4)


class TestEvalViews:
    def test_fifty_elevation_major(self):
        names = eval_view_names()
        assert len(names) == 50 and len(eval_views(np.zeros((3, 8, 16)), 4, 4)) == 50
        assert names[0] == "e+90_y000" and names[9] == "e+90_y324"
        assert names[20] == "e+00_y000" and names[-1] == "e-90_y324"
        assert sorted({p.pitch for p in eval_poses()}) == [-90, -45, 0, 45, 90]

    def test_half_roll_is_cyclic_permutation_at_equator(self, rng):
        canvas = rng.uniform(-1, 1, (3, 16, 32))
        a = eval_views(canvas, 8, 8)[20:30]
        b = eval_views(roll_canvas(canvas, 16), 8, 8)[20:30]
        for k in range(10):
            assert np.abs(b[k] - a[(k - 5) % 10]).max() < 1e-9

    def test_golden_views_byte_identical(self):
        gold = np.load(GOLDEN)
        canvas = from_uint8(gold["canvas"].transpose(1, 2, 0))
        views = eval_views(canvas, 32, 32, 90.0)
        assert list(gold["names"]) == eval_view_names()
        for name, view, ref in zip(gold["names"], views, gold["views"]):
            assert to_uint8(view).transpose(2, 0, 1).tobytes() == ref.tobytes(), name


class TestRoll:
    def test_full_width_identity(self, rng):
        c = rng.uniform(-1, 1, (3, 4, 8))
        np.testing.assert_array_equal(roll_canvas(c, 8), c)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(-50, 50), st.integers(-50, 50))
    def test_group_property_and_multiset(self, a, b):
        c = np.arange(3 * 4 * 8, dtype=float).reshape(3, 4, 8)
        np.testing.assert_array_equal(roll_canvas(roll_canvas(c, a), b), roll_canvas(c, a + b))
        np.testing.assert_array_equal(np.sort(roll_canvas(c, a), axis=None), np.sort(c, axis=None))

    def test_tensor_gradient(self, rng):
        x = Tensor(rng.standard_normal((1, 3, 4, 8)), requires_grad=True)
        roll_canvas(x, 3).sum().backward()
        np.testing.assert_array_equal(x.grad, 1.0)


class TestPng:
    def test_round_trip(self, tmp_path, rng):
        img = from_uint8(rng.integers(0, 256, (6, 12, 3), dtype=np.uint8))
        write_png(tmp_path / "a.png", img)
        np.testing.assert_array_equal(read_png(tmp_path / "a.png"), img)

    def test_quantization_rule(self):
        px = to_uint8(np.array([-1.0, -0.5, 0.0, 1.0, 1.5]).reshape(1, 1, 5))
        np.testing.assert_array_equal(px[0, :, 0], [0, 64, 128, 255, 255])

    def test_undecodable(self, tmp_path):
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"not a png")
        with pytest.raises(DataError, match="bad.png"):
            read_png(bad)

    def test_float64_independent_of_tensor_precision(self):
        with T.float64():
            a = extract_snapshot(pattern_canvas(16), FRONT, 8, 8)
        np.testing.assert_array_equal(a, extract_snapshot(pattern_canvas(16), FRONT, 8, 8))
