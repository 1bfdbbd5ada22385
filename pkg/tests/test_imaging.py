import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from mosaikit import imaging
from mosaikit.errors import FrameTooSmall, MalformedFile, OutOfBounds


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bilinear_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    img = rng.uniform(0, 255, (17, 23))
    u = rng.uniform(0, 22, 200)
    v = rng.uniform(0, 16, 200)
    u[:4] = [0, 22, 22, 5]
    v[:4] = [0, 16, 3, 16]
    ref = ndimage.map_coordinates(img, [v, u], order=1, mode="nearest")
    np.testing.assert_allclose(imaging.bilinear(img, u, v), ref, atol=1e-9)


def test_bilinear_exact_on_grid():
    img = np.random.default_rng(0).uniform(0, 255, (8, 9))
    vv, uu = np.mgrid[0:8, 0:9].astype(float)
    np.testing.assert_array_equal(imaging.bilinear(img, uu, vv), img)


def test_bilinear_bounds():
    img = np.zeros((8, 8))
    with pytest.raises(OutOfBounds):
        imaging.bilinear(img, [7.5], [0.0])
    vals, ok = imaging.bilinear_masked(img + 1, np.array([1.0, -1.0]), np.array([1.0, 1.0]))
    assert ok.tolist() == [True, False] and vals.tolist() == [1.0, 0.0]


def test_downsample_and_resize():
    img = np.arange(16.0).reshape(4, 4)
    np.testing.assert_array_equal(imaging.downsample2(img), [[2.5, 4.5], [10.5, 12.5]])
    np.testing.assert_allclose(imaging.resize(img, 4), img)
    assert imaging.resize(img, 2).tolist() == imaging.downsample2(img).tolist()
    assert imaging.resize(np.full((30, 40), 7.0), 11, 5).shape == (5, 11)


def test_as_frame_validation():
    with pytest.raises(FrameTooSmall):
        imaging.as_frame(np.zeros((32, 100)))
    with pytest.raises(ValueError):
        imaging.as_frame(np.full((64, 64), 300.0))
    with pytest.raises(ValueError):
        imaging.as_frame(np.zeros((64, 64, 3)))


def test_png_roundtrip(tmp_path):
    img = np.random.default_rng(1).uniform(0, 255, (20, 30))
    p = tmp_path / "x.png"
    imaging.write_png(p, img)
    back = imaging.read_png(p)
    assert back.shape == img.shape and np.abs(back - img).max() <= 0.5
    assert imaging.png_bytes(img) == p.read_bytes()
    assert not list(tmp_path.glob("*.tmp"))


def test_read_png_errors(tmp_path):
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"not a png")
    with pytest.raises(MalformedFile):
        imaging.read_png(bad)
    with pytest.raises(FileNotFoundError):
        imaging.read_png(tmp_path / "missing.png")


def test_list_images_sorted(tmp_path):
    for name in ["b.png", "a.png", "notes.txt", "c.PNG"]:
        (tmp_path / name).write_bytes(b"")
    assert [p.name for p in imaging.list_images(tmp_path)] == ["a.png", "b.png", "c.PNG"]
