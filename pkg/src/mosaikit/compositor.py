"""Mosaic rendering from frames and absolute poses (inverse warping)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import homography as hg
from .errors import CanvasTooLarge, MaskOutsideFrame, SizeMismatch
from .imaging import bilinear, resize

DEFAULT_CANVAS_CAP = 10 ** 8
BLENDS = ("overwrite_last", "running_mean")


@dataclass(frozen=True)
class FovMask:
    kind: str = "full"  # "full" or "circular"
    center: tuple[float, float] | None = None  # defaults to the frame centre
    radius: float | None = None  # defaults to half the shorter side

    def resolve(self, shape):
        h, w = shape
        c = self.center if self.center is not None else ((w - 1) / 2.0, (h - 1) / 2.0)
        r = self.radius if self.radius is not None else min(h, w) / 2.0
        return c, r

    def contains(self, shape, u, v) -> np.ndarray:
        if self.kind == "full":
            return np.ones(np.shape(u), dtype=bool)
        (cu, cv), r = self.resolve(shape)
        return (u - cu) ** 2 + (v - cv) ** 2 <= r * r


@dataclass
class Mosaic:
    canvas: np.ndarray
    offset: np.ndarray
    coverage: np.ndarray


def frame_corners(frame_shape) -> np.ndarray:
    h, w = frame_shape
    return np.array([[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]], dtype=float)


def compute_canvas(frame_shape, absolute: Sequence[np.ndarray],
                   cap: int = DEFAULT_CANVAS_CAP):
    """``(width, height, offset)`` bounding every projected frame corner.

    Raises :class:`CanvasTooLarge` before anything is allocated when the
    area would exceed ``cap`` pixels.
    """
    if len(absolute) == 0:
        raise ValueError("no poses")
    corners = frame_corners(frame_shape)
    pts = np.vstack([hg.warp_points(h, corners) for h in absolute])
    if not np.all(np.isfinite(pts)):
        raise CanvasTooLarge("pose chain produced non-finite corners")
    lo = np.floor(pts.min(axis=0) + 1e-9)
    hi = np.ceil(pts.max(axis=0) - 1e-9)
    width, height = (hi - lo + 1).astype(float)
    if width * height > cap:
        raise CanvasTooLarge(
            f"canvas {width:.0f}x{height:.0f} exceeds the {cap} px cap (diverging pose chain?)"
        )
    return int(width), int(height), hg.translation(0.0 - lo[0], 0.0 - lo[1])


def render(frames: Sequence[np.ndarray], absolute: Sequence[np.ndarray],
           mask: FovMask = FovMask(), blend: str = "overwrite_last",
           cap: int = DEFAULT_CANVAS_CAP) -> Mosaic:
    """Inverse-warp every frame into a shared canvas.

    For each canvas pixel inside a frame's projected footprint the frame is
    sampled bilinearly through the inverted pose. ``overwrite_last`` paints
    frames in sequence order; ``running_mean`` averages all contributions.
    """
    if len(frames) != len(absolute):
        raise SizeMismatch(f"{len(frames)} frames but {len(absolute)} poses")
    if blend not in BLENDS:
        raise ValueError(f"blend must be one of {BLENDS}")
    shape = np.shape(frames[0])
    if any(np.shape(f) != shape for f in frames):
        raise SizeMismatch("all frames must have the same size")
    width, height, offset = compute_canvas(shape, absolute, cap)
    acc = np.zeros((height, width))
    count = np.zeros((height, width), dtype=np.int64)
    fh, fw = shape
    corners = frame_corners(shape)
    for frame, pose in zip(frames, absolute):
        to_canvas = hg.compose(offset, pose)
        back = hg.invert(to_canvas)
        c = hg.warp_points(to_canvas, corners)
        u0 = max(int(math.floor(c[:, 0].min() + 1e-9)), 0)
        u1 = min(int(math.ceil(c[:, 0].max() - 1e-9)), width - 1)
        v0 = max(int(math.floor(c[:, 1].min() + 1e-9)), 0)
        v1 = min(int(math.ceil(c[:, 1].max() - 1e-9)), height - 1)
        uu, vv = np.meshgrid(np.arange(u0, u1 + 1, dtype=float), np.arange(v0, v1 + 1, dtype=float))
        src = hg.warp_points(back, np.column_stack([uu.ravel(), vv.ravel()]))
        su, sv = src[:, 0], src[:, 1]
        tol = 1e-7
        inside = (su >= -tol) & (su <= fw - 1 + tol) & (sv >= -tol) & (sv <= fh - 1 + tol)
        inside &= mask.contains(shape, su, sv)
        if not inside.any():
            continue
        vals = bilinear(np.asarray(frame, dtype=float), su[inside], sv[inside], check=False)
        ci = uu.ravel()[inside].astype(np.intp)
        cj = vv.ravel()[inside].astype(np.intp)
        if blend == "overwrite_last":
            acc[cj, ci] = vals
        else:
            acc[cj, ci] += vals
        count[cj, ci] += 1
    if blend == "running_mean":
        hit = count > 0
        acc[hit] /= count[hit]
    return Mosaic(acc, offset, count)


def crop_square_from_circle(frame: np.ndarray, mask: FovMask, out_size: int = 256,
                            side: int | None = None) -> np.ndarray:
    """Crop the square inscribed in the circular field of view and resize it.

    ``side`` overrides the inscribed side ``floor(r * sqrt(2))``. With a full
    mask the largest centred square is used.
    """
    frame = np.asarray(frame, dtype=float)
    h, w = frame.shape
    (cu, cv), r = mask.resolve(frame.shape)
    if mask.kind == "circular":
        if cu - r < -0.5 - 1e-9 or cv - r < -0.5 - 1e-9 or cu + r > w - 0.5 + 1e-9 or cv + r > h - 0.5 + 1e-9:
            raise MaskOutsideFrame("circular field of view extends beyond the frame")
        side = side or int(math.floor(r * math.sqrt(2.0)))
    else:
        side = side or min(h, w)
    x0 = int(round(cu - (side - 1) / 2.0))
    y0 = int(round(cv - (side - 1) / 2.0))
    if x0 < 0 or y0 < 0 or x0 + side > w or y0 + side > h:
        raise MaskOutsideFrame("crop square leaves the frame")
    sq = frame[y0 : y0 + side, x0 : x0 + side]
    if side == out_size:
        return sq.copy()
    return resize(sq, out_size)
