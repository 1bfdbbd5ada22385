import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mosaikit import homography as hg
from mosaikit import synth
from mosaikit.errors import MalformedFile, TextureTooSmall


@pytest.fixture(scope="module")
def small_tex():
    return synth.vessel_texture(400, seed=2)


def test_linear_direction(small_tex):
    cfg = synth.TrajectoryConfig(kind="linear", frames=2, frame_size=128, rotation_per_frame=0.0, step_px=1.0)
    seq = synth.generate(small_tex, cfg)
    np.testing.assert_allclose(seq.gt_relative[0], hg.translation(1, 0), atol=1e-12)
    # content moves opposite to the camera: frame 1 pixel u shows frame 0 pixel u + 1
    np.testing.assert_allclose(seq.frames[1][:, :-1], seq.frames[0][:, 1:], atol=1e-9)


def test_circular_loop_closes():
    cfg = synth.TrajectoryConfig(frames=361)
    maps = synth.camera_maps(cfg, (1100, 1100))
    rel = [hg.compose(hg.invert(maps[k]), maps[k + 1]) for k in range(360)]
    np.testing.assert_allclose(hg.compose_all(rel), np.eye(3), atol=1e-6)


@settings(max_examples=25, deadline=None)
@given(
    st.sampled_from(synth.KINDS),
    st.floats(-3.0, 3.0),
    st.floats(0.0, 2.0),
)
def test_relative_rotation_matches_config(kind, rot_deg, growth):
    cfg = synth.TrajectoryConfig(kind=kind, frames=4, frame_size=64, radius_px=100,
                                 radius_growth_px_per_frame=growth, rotation_per_frame=math.radians(rot_deg))
    seq = synth.generate(np.random.default_rng(0).uniform(0, 255, (400, 400)), cfg)
    for h in seq.gt_relative:
        d = hg.decompose_similarity(h)
        assert abs(math.remainder(d.theta - cfg.rotation_per_frame, 2 * math.pi)) < 1e-9
        assert abs(d.s_g - 1) < 1e-9 and abs(d.s_h - 1) < 1e-9
    for k, a in enumerate(seq.gt_absolute):
        np.testing.assert_allclose(a, hg.compose_all([np.eye(3)] + seq.gt_relative[:k]), atol=1e-9)


def test_frames_follow_ground_truth(small_tex):
    cfg = synth.TrajectoryConfig(frames=3, frame_size=128, radius_px=60, rotation_per_frame=math.radians(2))
    seq = synth.generate(small_tex, cfg)
    g = np.arange(32, 96, dtype=float)
    uu, vv = np.meshgrid(g, g)
    pts = hg.warp_points(seq.gt_relative[0], np.column_stack([uu.ravel(), vv.ravel()]))
    from mosaikit.imaging import bilinear

    prev = bilinear(seq.frames[0], pts[:, 0], pts[:, 1])
    assert np.abs(prev - seq.frames[1][32:96, 32:96].ravel()).mean() < 1.5


def test_texture_too_small():
    with pytest.raises(TextureTooSmall):
        synth.generate(np.zeros((300, 300)), synth.TrajectoryConfig(frames=3))


def test_config_validation():
    with pytest.raises(ValueError, match="frames >= 2 required"):
        synth.TrajectoryConfig(frames=1).validate()
    with pytest.raises(ValueError):
        synth.TrajectoryConfig(kind="zigzag").validate()


def test_textures_are_deterministic_and_in_range():
    for kind in ("vessel", "checkerboard", "ramp"):
        a = synth.make_texture(kind, 256, seed=1)
        b = synth.make_texture(kind, 256, seed=1)
        np.testing.assert_array_equal(a, b)
        assert a.min() >= 0 and a.max() <= 255 and a.std() > 5


@pytest.fixture(scope="module")
def seq(small_tex):
    cfg = synth.TrajectoryConfig(frames=4, frame_size=128, radius_px=40)
    return synth.generate(small_tex, cfg)


def test_empty_degradation_identity(seq):
    out = synth.add_degradations(seq, synth.DegradationSpec())
    for a, b in zip(seq.frames, out.frames):
        np.testing.assert_array_equal(a, b)


def test_static_blob_only_touches_blob(seq):
    spec = synth.DegradationSpec(specular_blobs=1, blob_drift=0.0, seed=3)
    out = synth.add_degradations(seq, spec)
    (track,) = synth.blob_tracks(spec, len(seq.frames), 128)[:, 0:1].transpose(1, 0, 2)
    for k, (a, b) in enumerate(zip(seq.frames, out.frames)):
        vv, uu = np.mgrid[0:128, 0:128]
        cu, cv = track[k]
        inside = (uu - cu) ** 2 + (vv - cv) ** 2 < spec.blob_radius ** 2
        diff = a != b
        assert diff.any() and not (diff & ~inside).any()
        assert (b >= a - 1e-12).all()


def test_noise_statistics(small_tex):
    cfg = synth.TrajectoryConfig(frames=2, frame_size=256, radius_px=0)
    tex = np.full((600, 600), 128.0)
    seq = synth.generate(tex, cfg)
    out = synth.add_degradations(seq, synth.DegradationSpec(noise_sigma=5.0, seed=9))
    d = out.frames[0] - seq.frames[0]
    assert abs(d.mean()) < 0.5
    assert 4.5 <= d.std() <= 5.5
    again = synth.add_degradations(seq, synth.DegradationSpec(noise_sigma=5.0, seed=9))
    np.testing.assert_array_equal(again.frames[1], out.frames[1])


def test_vignette_darkens_corners(seq):
    out = synth.add_degradations(seq, synth.DegradationSpec(vignette=0.3))
    f0, f1 = seq.frames[0], out.frames[0]
    assert f1[0, 0] < f0[0, 0] and abs(f1[64, 64] - f0[64, 64]) < 0.05 * f0[64, 64] + 1e-9


def test_write_read_roundtrip(tmp_path, seq):
    synth.write_sequence(seq, tmp_path)
    back = synth.read_sequence(tmp_path)
    assert len(back.frames) == len(seq.frames)
    for a, b in zip(seq.gt_absolute + seq.gt_relative, back.gt_absolute + back.gt_relative):
        assert np.array_equal(a, b)
    for a, b in zip(seq.frames, back.frames):
        assert np.abs(a - b).max() <= 0.5
    assert synth.read_manifest(tmp_path / "manifest.txt")["frames"] == "4"


def test_missing_gt_is_malformed(tmp_path, seq):
    synth.write_sequence(seq, tmp_path)
    (tmp_path / "gt_relative.txt").unlink()
    with pytest.raises(MalformedFile):
        synth.read_sequence(tmp_path)


def test_write_is_deterministic(tmp_path, seq):
    synth.write_sequence(seq, tmp_path / "a")
    synth.write_sequence(seq, tmp_path / "b")
    for p in sorted((tmp_path / "a").iterdir()):
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


@pytest.mark.slow
def test_full_length_sequence_io_time(tmp_path):
    tex = synth.vessel_texture(1024, seed=0)
    cfg = synth.TrajectoryConfig(kind="spiral", frames=811, radius_px=120, radius_growth_px_per_frame=0.1)
    seq = synth.generate(tex, cfg)
    t = time.perf_counter()
    synth.write_sequence(seq, tmp_path)
    back = synth.read_sequence(tmp_path)
    elapsed = time.perf_counter() - t
    assert len(back.frames) == 811
    assert elapsed < 30.0
