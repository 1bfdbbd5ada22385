"""Grayscale frame helpers: validation, bilinear sampling, resizing, PNG I/O.

A frame is a 2-D float64 array indexed ``[v, u]`` with intensities in
[0, 255].
"""

from __future__ import annotations

import io
import os
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FrameTooSmall, MalformedFile, OutOfBounds

MIN_SIDE = 64
_BOUNDS_TOL = 1e-9


def as_frame(img, min_side: int = MIN_SIDE) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale frame, got shape {a.shape}")
    if min(a.shape) < min_side:
        raise FrameTooSmall(f"frame {a.shape[1]}x{a.shape[0]} below {min_side} px")
    if not np.all(np.isfinite(a)) or a.min() < 0 or a.max() > 255:
        raise ValueError("frame intensities must be finite and within [0, 255]")
    return a


def in_bounds(shape, u, v, tol: float = _BOUNDS_TOL) -> np.ndarray:
    h, w = shape
    return (u >= -tol) & (u <= w - 1 + tol) & (v >= -tol) & (v <= h - 1 + tol)


def bilinear(img: np.ndarray, u, v, check: bool = True) -> np.ndarray:
    """Sample ``img`` at real coordinates ``(u, v)``.

    Coordinates must lie inside ``[0, w-1] x [0, h-1]``; samples at integer
    positions return the stored pixel exactly.
    """
    h, w = img.shape
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if check and not np.all(in_bounds(img.shape, u, v)):
        raise OutOfBounds("sample coordinates leave the image")
    u = np.clip(u, 0.0, w - 1.0)
    v = np.clip(v, 0.0, h - 1.0)
    x0 = u.astype(np.intp)
    y0 = v.astype(np.intp)
    fx = u - x0
    fy = v - y0
    # step to the next column/row only where one exists, fraction is 0 otherwise
    sx = (x0 < w - 1).astype(np.intp)
    sy = (y0 < h - 1).astype(np.intp)
    sy *= w
    idx = y0 * w
    idx += x0
    flat = img.ravel()
    top = flat[idx]
    right = flat[idx + sx]
    idx += sy
    bot = flat[idx]
    bot_right = flat[idx + sx]
    # lerp in place: a + f * (b - a)
    right -= top
    right *= fx
    top += right
    bot_right -= bot
    bot_right *= fx
    bot += bot_right
    bot -= top
    bot *= fy
    top += bot
    return top


def bilinear_masked(img: np.ndarray, u, v):
    """Like :func:`bilinear` but returns ``(values, valid)``; invalid samples are 0."""
    valid = in_bounds(img.shape, u, v)
    vals = bilinear(img, u, v, check=False)
    return np.where(valid, vals, 0.0), valid


def downsample2(img: np.ndarray) -> np.ndarray:
    """2x2 box average, dropping an odd trailing row/column."""
    h, w = img.shape
    a = img[: h // 2 * 2, : w // 2 * 2]
    return 0.25 * (a[0::2, 0::2] + a[1::2, 0::2] + a[0::2, 1::2] + a[1::2, 1::2])


def resize(img: np.ndarray, out_w: int, out_h: int | None = None) -> np.ndarray:
    """Bilinear resize with pixel-area alignment (edges clamp)."""
    out_h = out_w if out_h is None else out_h
    h, w = img.shape
    u = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    v = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    uu, vv = np.meshgrid(np.clip(u, 0, w - 1), np.clip(v, 0, h - 1))
    return bilinear(img, uu, vv, check=False)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def png_bytes(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(to_uint8(img)).save(buf, format="PNG")
    return buf.getvalue()


def write_png(path, img: np.ndarray) -> None:
    atomic_write_bytes(path, png_bytes(img))


def read_png(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("L"), dtype=np.float64)
    except (OSError, ValueError) as exc:
        if not Path(path).exists():
            raise
        raise MalformedFile(f"cannot decode image {path}: {exc}") from exc


IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def list_images(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"not a directory: {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode())
