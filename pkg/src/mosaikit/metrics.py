"""Evaluation measures: pose residual curve, corner RMSE, photometric error."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import homography as hg
from .compositor import FovMask, frame_corners
from .errors import EmptyOverlap, LengthMismatch
from .imaging import atomic_write_text, bilinear


@dataclass
class ResidualReport:
    per_frame: list[float]
    mean: float
    max: float


@dataclass
class PairMetrics:
    rmse: float
    photometric: float


def mean_residual_error(estimated: Sequence[np.ndarray], gt: Sequence[np.ndarray],
                        frame_shape) -> ResidualReport:
    """Per frame, mean distance between the four frame corners under both poses."""
    if len(estimated) != len(gt):
        raise LengthMismatch(f"{len(estimated)} estimated poses vs {len(gt)} ground truth")
    if len(gt) == 0:
        raise LengthMismatch("empty pose lists")
    corners = frame_corners(frame_shape)
    per = [
        float(np.mean(np.linalg.norm(hg.warp_points(e, corners) - hg.warp_points(g, corners), axis=1)))
        for e, g in zip(estimated, gt)
    ]
    return ResidualReport(per, float(np.mean(per)), float(np.max(per)))


def corner_rmse(predicted: np.ndarray, gt: np.ndarray) -> float:
    d = np.asarray(predicted, dtype=float) - np.asarray(gt, dtype=float)
    return float(np.sqrt(np.mean(d * d)))


def photometric_error(f_k: np.ndarray, f_k1: np.ndarray, h_rel: np.ndarray,
                      mask: FovMask = FovMask()) -> float:
    """Mean ``|f_{k+1}(x) - f_k(h_rel(x))|`` over pixels valid in both frames."""
    f_k = np.asarray(f_k, dtype=float)
    f_k1 = np.asarray(f_k1, dtype=float)
    if f_k.shape != f_k1.shape:
        raise ValueError("frames must have the same size")
    h, w = f_k1.shape
    vv, uu = np.mgrid[0:h, 0:w].astype(float)
    pts = hg.warp_points(h_rel, np.column_stack([uu.ravel(), vv.ravel()]))
    su, sv = pts[:, 0], pts[:, 1]
    tol = 1e-9
    valid = (su >= -tol) & (su <= w - 1 + tol) & (sv >= -tol) & (sv <= h - 1 + tol)
    valid &= mask.contains(f_k1.shape, uu.ravel(), vv.ravel())
    valid &= mask.contains(f_k.shape, su, sv)
    if not valid.any():
        raise EmptyOverlap("no pixel is valid in both frames")
    warped = bilinear(f_k, su[valid], sv[valid], check=False)
    return float(np.mean(np.abs(f_k1.ravel()[valid] - warped)))


@dataclass
class EvaluationReport:
    residual: ResidualReport | None = None
    rmse: float = math.nan
    photometric: float = math.nan
    photometric_per_pair: list[float] = field(default_factory=list)

    def summary(self) -> str:
        r = self.residual
        mean = r.mean if r else math.nan
        mx = r.max if r else math.nan
        return (
            f"rmse={self.rmse:.6g} photometric={self.photometric:.6g} "
            f"residual_mean={mean:.6g} residual_max={mx:.6g}"
        )


def evaluate_sequence(frames=None, absolute=None, gt=None, pairs=None,
                      mask: FovMask = FovMask()) -> EvaluationReport:
    """Aggregate report.

    ``pairs`` is an iterable of ``(predicted_fp, gt_fp)``; its RMSE is taken
    per pair over the 8 components, then averaged over pairs. Photometric
    error is averaged over adjacent frames using the relatives implied by
    ``absolute``.
    """
    if gt is None and pairs is None:
        raise ValueError("ground-truth poses or labelled pairs are required")
    report = EvaluationReport()
    if gt is not None:
        if absolute is None:
            raise ValueError("estimated poses are required with ground truth")
        shape = np.shape(frames[0]) if frames else (256, 256)
        report.residual = mean_residual_error(absolute, gt, shape)
    if pairs is not None:
        errs = [corner_rmse(p, g) for p, g in pairs]
        if errs:
            report.rmse = float(np.mean(errs))
    if frames is not None and absolute is not None and len(frames) > 1:
        if len(frames) != len(absolute):
            raise LengthMismatch(f"{len(frames)} frames vs {len(absolute)} poses")
        per = []
        for k in range(len(frames) - 1):
            rel = hg.compose(hg.invert(absolute[k]), absolute[k + 1])
            per.append(photometric_error(frames[k], frames[k + 1], rel, mask))
        report.photometric_per_pair = per
        report.photometric = float(np.mean(per))
    return report


def write_residual_csv(path, curves: dict[str, ResidualReport] | ResidualReport) -> None:
    """``frame,residual_px`` for one curve; one ``residual_px_<name>`` column per curve otherwise."""
    if isinstance(curves, ResidualReport):
        names, cols = ["residual_px"], [curves.per_frame]
    else:
        names = [f"residual_px_{k}" for k in curves]
        cols = [c.per_frame for c in curves.values()]
    n = max(len(c) for c in cols)
    lines = [",".join(["frame"] + names)]
    for i in range(n):
        lines.append(",".join([str(i)] + [repr(float(c[i])) if i < len(c) else "" for c in cols]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_residual_csv(path) -> dict[str, list[float]]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        cols = {name: [] for name in header[1:]}
        for row in reader:
            for name, val in zip(header[1:], row[1:]):
                if val:
                    cols[name].append(float(val))
    return cols
