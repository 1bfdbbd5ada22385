import math

import numpy as np
import pytest

from mosaikit import compositor as cp
from mosaikit import homography as hg
from mosaikit import synth
from mosaikit.errors import CanvasTooLarge, MaskOutsideFrame, SizeMismatch
from mosaikit.imaging import bilinear


def test_canvas_single_identity():
    w, h, off = cp.compute_canvas((256, 256), [np.eye(3)])
    assert (w, h) == (256, 256)
    assert np.array_equal(off, np.eye(3))


def test_canvas_two_poses():
    w, h, off = cp.compute_canvas((256, 256), [np.eye(3), hg.translation(100, 0)])
    assert (w, h) == (356, 256)


def test_canvas_negative_offset():
    w, h, off = cp.compute_canvas((256, 256), [np.eye(3), hg.translation(-10.5, 3)])
    assert (w, h) == (267, 259)
    np.testing.assert_allclose(off, hg.translation(11, 0))


def test_canvas_loop_matches_corner_oracle():
    cfg = synth.TrajectoryConfig(frames=360)
    maps = synth.camera_maps(cfg, (1100, 1100))
    absolute = [hg.compose(hg.invert(maps[0]), m) for m in maps]
    w, h, off = cp.compute_canvas((256, 256), absolute)
    xs, ys = [], []
    for a in absolute:
        for u, v in [(0, 0), (255, 0), (255, 255), (0, 255)]:
            den = a[2, 0] * u + a[2, 1] * v + a[2, 2]
            xs.append((a[0, 0] * u + a[0, 1] * v + a[0, 2]) / den)
            ys.append((a[1, 0] * u + a[1, 1] * v + a[1, 2]) / den)
    assert w == math.ceil(max(xs) - 1e-9) - math.floor(min(xs) + 1e-9) + 1
    assert h == math.ceil(max(ys) - 1e-9) - math.floor(min(ys) + 1e-9) + 1
    # view rotation follows the orbit, so the outer frame corner traces a circle
    outer = math.hypot(300 + 127.5, 127.5)
    assert abs(w - 2 * outer) < 3 and abs(h - 2 * outer) < 3


def test_canvas_cap():
    poses = [np.diag([1.05 ** k, 1.05 ** k, 1.0]) for k in range(300)]
    with pytest.raises(CanvasTooLarge):
        cp.compute_canvas((256, 256), poses)
    with pytest.raises(CanvasTooLarge):
        cp.render([np.zeros((256, 256))] * 300, poses)


@pytest.mark.parametrize("blend", cp.BLENDS)
def test_render_single_frame_exact(vessel, blend):
    f = vessel[:256, :256]
    m = cp.render([f], [np.eye(3)], blend=blend)
    np.testing.assert_array_equal(m.canvas, f)
    assert (m.coverage == 1).all()


def test_running_mean_of_equal_frames(vessel):
    f = vessel[:256, :256]
    m = cp.render([f, f], [np.eye(3)] * 2, blend="running_mean")
    np.testing.assert_allclose(m.canvas, f, atol=1e-12)
    assert (m.coverage == 2).all()


def test_overwrite_last_order():
    a, b = np.full((64, 64), 10.0), np.full((64, 64), 200.0)
    m = cp.render([a, b], [np.eye(3), hg.translation(32, 0)])
    assert m.canvas[10, 10] == 10 and m.canvas[10, 40] == 200 and m.canvas[10, 90] == 200
    m = cp.render([a, b], [np.eye(3), hg.translation(32, 0)], blend="running_mean")
    assert m.canvas[10, 40] == pytest.approx(105)


def test_render_matches_texture():
    tex = synth.vessel_texture(1024, seed=6)
    cfg = synth.TrajectoryConfig(frames=30, radius_px=200, angular_step=math.radians(3), rotation_per_frame=math.radians(2))
    seq = synth.generate(tex, cfg)
    m = cp.render(seq.frames, seq.gt_absolute)
    t0 = synth.camera_maps(cfg, tex.shape)[0]
    to_tex = hg.compose(t0, hg.invert(m.offset))
    covered = np.argwhere(m.coverage > 0)
    pts = hg.warp_points(to_tex, covered[:, ::-1].astype(float))
    ref = bilinear(tex, pts[:, 0], pts[:, 1])
    assert np.abs(m.canvas[covered[:, 0], covered[:, 1]] - ref).mean() < 1.0


def test_render_size_mismatch():
    with pytest.raises(SizeMismatch):
        cp.render([np.zeros((64, 64))], [np.eye(3)] * 2)
    with pytest.raises(SizeMismatch):
        cp.render([np.zeros((64, 64)), np.zeros((64, 65))], [np.eye(3)] * 2)


def test_circular_mask_limits_coverage():
    f = np.full((64, 64), 100.0)
    m = cp.render([f], [np.eye(3)], mask=cp.FovMask("circular"))
    assert m.coverage[0, 0] == 0 and m.coverage[32, 32] == 1
    assert abs(m.coverage.sum() - math.pi * 32 ** 2) < 0.05 * math.pi * 32 ** 2


def test_crop_inscribed_square():
    f = np.random.default_rng(0).uniform(0, 255, (256, 256))
    circ = cp.FovMask("circular")
    assert cp.crop_square_from_circle(f, circ).shape == (256, 256)
    raw = cp.crop_square_from_circle(f, circ, out_size=181)
    assert raw.shape == (181, 181)
    x0 = int(round(127.5 - 90))
    np.testing.assert_array_equal(raw, f[x0 : x0 + 181, x0 : x0 + 181])


def test_crop_full_mask_is_resize():
    f = np.random.default_rng(1).uniform(0, 255, (300, 300))
    np.testing.assert_array_equal(cp.crop_square_from_circle(f, cp.FovMask(), out_size=300), f)
    assert cp.crop_square_from_circle(f, cp.FovMask(), out_size=256).shape == (256, 256)


def test_crop_large_fov_and_override():
    f = np.zeros((470, 470))
    circ = cp.FovMask("circular")
    assert cp.crop_square_from_circle(f, circ, out_size=332).shape == (332, 332)
    assert math.floor(235 * math.sqrt(2)) == 332
    assert cp.crop_square_from_circle(f, circ, out_size=312, side=312).shape == (312, 312)


def test_crop_mask_outside_frame():
    with pytest.raises(MaskOutsideFrame):
        cp.crop_square_from_circle(np.zeros((256, 256)), cp.FovMask("circular", center=(100, 128), radius=128))
