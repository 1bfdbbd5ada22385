"""Pairwise patch homography estimators.

Every estimator takes an :class:`EstimatorRequest` and returns an
:class:`EstimatorResult` whose ``fp`` is the four-point displacement of the
anchor corners. The implied homography ``H`` (frame coordinates) satisfies
``patch_b(x) ~ patch_a(H(x))``: between co-located patches of frames ``k`` and
``k+1`` it maps frame ``k+1`` coordinates into frame ``k``.

Three implementations share the contract:

* :class:`DirectEstimator` - coarse-to-fine Gauss-Newton over rotation about
  the patch centre plus translation (inverse compositional form);
* :class:`FeatureEstimator` - Harris corners, NCC matching, RANSAC similarity;
* :class:`FileEstimator` - replays externally computed predictions.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np
from scipy import ndimage

from . import homography as hg
from .cda import MotionParams, apply_motion
from .errors import DegenerateInput, InsufficientFeatures, MalformedFile, MissingPrediction
from .imaging import atomic_write_text, bilinear, downsample2

FEATURE_STREAM = 0xFEA7


@dataclass
class EstimatorRequest:
    patch_a: np.ndarray
    patch_b: np.ndarray
    anchor: np.ndarray
    frame_index: int = 0
    iteration_index: int = 0


@dataclass
class EstimatorResult:
    fp: np.ndarray
    converged: bool
    residual: float
    motion: MotionParams | None = None


class Estimator(Protocol):
    def estimate(self, req: EstimatorRequest) -> EstimatorResult: ...


def _check_request(req: EstimatorRequest):
    a = np.asarray(req.patch_a, dtype=float)
    b = np.asarray(req.patch_b, dtype=float)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("patches must be square and of equal size")
    return a, b


def _patch_to_frame(anchor: np.ndarray, size: int) -> np.ndarray:
    """Homography from canonical patch coordinates onto the anchor quad."""
    return hg.dlt(hg.square_quad(0, 0, size), anchor)


def patch_h_to_fp(h_patch: np.ndarray, anchor: np.ndarray, size: int) -> np.ndarray:
    """Four-point form of a patch-coordinate homography, anchored in the frame."""
    hq = _patch_to_frame(anchor, size)
    h = hg.compose(hg.compose(hq, h_patch), hg.invert(hq))
    return hg.matrix_to_four_point(h, anchor)


# --- direct intensity-based estimator -------------------------------------------


def central_gradients(img: np.ndarray):
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    gx[:, 1:-1] = 0.5 * (img[:, 2:] - img[:, :-2])
    gy[1:-1] = 0.5 * (img[2:] - img[:-2])
    return gx, gy


def _warp_matrix(beta: float, d, c: float) -> np.ndarray:
    return hg.rigid(beta, d[0], d[1], center=(c, c))


def _warp_params(m: np.ndarray, c: float):
    beta = math.atan2(m[0, 1], m[0, 0])
    r = hg.rotation(beta)
    cc = np.array([c, c])
    d = m[:2, 2] - cc + r @ cc
    return beta, d


_GRIDS: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _interior_grid(n: int):
    if n not in _GRIDS:
        g = np.arange(1, n - 1, dtype=float)
        uu, vv = np.meshgrid(g, g)
        _GRIDS[n] = (uu.ravel(), vv.ravel())
    return _GRIDS[n]


class _Level:
    """One pyramid level with buffers reused across Gauss-Newton iterations.

    The template is ``patch_b``; its interior pixels carry a fixed Jacobian.
    Preallocating the per-pixel work arrays avoids allocator churn, which
    otherwise dominates the cost of an iteration.
    """

    def __init__(self, image: np.ndarray, template: np.ndarray):
        n = template.shape[0]
        self.image = np.ascontiguousarray(image)
        self.flat = self.image.ravel()
        self.center = c = (n - 1) / 2.0
        self.u, self.v = _interior_grid(n)
        m = self.u.size
        work = np.empty((14, m))
        self.wu, self.wv, self.fx, self.fy, self.s0, self.s1, self.s2, self.s3 = work[:8]
        jac = work[8:11]
        # template gradients at interior pixels, central differences
        np.subtract(template[1:-1, 2:], template[1:-1, :-2], out=jac[1].reshape(n - 2, n - 2))
        np.subtract(template[2:, 1:-1], template[:-2, 1:-1], out=jac[2].reshape(n - 2, n - 2))
        jac[1:] *= 0.5
        # d W / d beta at beta = 0 is (v - c, -(u - c))
        np.multiply(jac[1], self.v - c, out=jac[0])
        jac[0] -= jac[2] * (self.u - c)
        self.jac = jac.T
        self.outer = np.empty((m, 6))
        for col, (i, j) in enumerate(((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))):
            np.multiply(jac[i], jac[j], out=self.outer[:, col])
        self.tvals = work[11]
        self.tvals[:] = template[1:-1, 1:-1].ravel()
        self.validf = work[12]
        self.x0, self.idx = np.empty((2, m), dtype=np.intp)
        self.valid, self.tmp_mask = np.empty((2, m), dtype=bool)

    def residuals(self, m: np.ndarray):
        """Masked ``patch_a(W(x)) - patch_b(x)`` and the valid-pixel weights."""
        h, w = self.image.shape
        wu, wv, fx, fy = self.wu, self.wv, self.fx, self.fy
        np.multiply(self.u, m[0, 0], out=wu)
        np.multiply(self.v, m[0, 1], out=fx)
        wu += fx
        wu += m[0, 2]
        np.multiply(self.u, m[1, 0], out=wv)
        np.multiply(self.v, m[1, 1], out=fy)
        wv += fy
        wv += m[1, 2]
        valid, t = self.valid, self.tmp_mask
        np.greater_equal(wu, 0.0, out=valid)
        np.less_equal(wu, w - 1.0, out=t)
        valid &= t
        np.greater_equal(wv, 0.0, out=t)
        valid &= t
        np.less_equal(wv, h - 1.0, out=t)
        valid &= t
        np.clip(wu, 0.0, w - 1.0, out=wu)
        np.clip(wv, 0.0, h - 1.0, out=wv)
        x0, idx = self.x0, self.idx
        np.minimum(wv, h - 2.0, out=fy)
        np.copyto(idx, fy, casting="unsafe")
        np.minimum(wu, w - 2.0, out=fx)
        np.copyto(x0, fx, casting="unsafe")
        np.subtract(wu, x0, out=fx)
        np.subtract(wv, idx, out=fy)
        idx *= w
        idx += x0
        a, b, c, d = self.s0, self.s1, self.s2, self.s3
        np.take(self.flat, idx, out=a)
        idx += 1
        np.take(self.flat, idx, out=b)
        idx += w
        np.take(self.flat, idx, out=d)
        idx -= 1
        np.take(self.flat, idx, out=c)
        b -= a
        b *= fx
        a += b
        d -= c
        d *= fx
        c += d
        c -= a
        c *= fy
        a += c
        a -= self.tvals
        np.copyto(self.validf, valid)
        a *= self.validf
        return a, self.validf


@dataclass
class DirectEstimator:
    """Gauss-Newton SSD alignment under rotation about the patch centre + shift.

    Solved in inverse compositional form on a 3-level box pyramid: the
    template is ``patch_b`` (its central-difference gradients give a fixed
    Jacobian), ``patch_a`` is bilinearly resampled at the current warp, and
    pixels whose warped position leaves ``patch_a`` are masked out.

    Both patches are first smoothed with a small Gaussian: it commutes with
    the rigid warp, and it keeps noise out of the template gradients, which
    would otherwise inflate the fixed Hessian and shrink every step.

    ``converged`` requires the finest level to reach the update tolerance,
    at least ``min_overlap`` of the pixels to stay valid, and a mean absolute
    residual no larger than ``max_residual_ratio`` times the mean absolute
    deviation of ``patch_b``.
    """

    levels: int = 3
    max_iterations: int = 50
    tolerance: float = 1e-5
    min_overlap: float = 0.5
    max_residual_ratio: float = 0.8  # misaligned patches sit near 1.0 or above
    smoothing: float = 1.0

    def estimate(self, req: EstimatorRequest) -> EstimatorResult:
        a, b = _check_request(req)
        if a.var() <= 1e-12 or b.var() <= 1e-12:
            raise DegenerateInput("constant patch")
        if self.smoothing > 0:
            a = ndimage.gaussian_filter(a, self.smoothing, mode="nearest")
            b = ndimage.gaussian_filter(b, self.smoothing, mode="nearest")
        pyr = [(a, b)]
        for _ in range(self.levels - 1):
            pa, pb = pyr[-1]
            if min(pa.shape) < 16:
                break
            pyr.append((downsample2(pa), downsample2(pb)))

        beta, d = 0.0, np.zeros(2)
        level_ok = False
        stats = (math.inf, 0.0)
        for li in range(len(pyr) - 1, -1, -1):
            scale = 2.0 ** li
            lvl = _Level(*pyr[li])
            m = _warp_matrix(beta, d / scale, lvl.center)
            m, level_ok, stats = self._align(lvl, m)
            beta, dl = _warp_params(m, lvl.center)
            d = dl * scale

        residual, overlap = stats
        motion = MotionParams(float(beta), float(d[0]), float(d[1]))
        fp = apply_motion(req.anchor, motion) - np.asarray(req.anchor, dtype=float)
        finite = bool(np.all(np.isfinite(fp))) and math.isfinite(residual)
        spread = float(np.mean(np.abs(b - b.mean())))
        converged = (
            level_ok
            and finite
            and overlap >= self.min_overlap
            and residual <= self.max_residual_ratio * spread
        )
        if not finite:
            residual = math.inf
        return EstimatorResult(fp, converged, float(residual), motion)

    def _align(self, lvl: _Level, m: np.ndarray):
        n_all = lvl.u.size
        ok = False
        residual, overlap = math.inf, 0.0
        for _ in range(self.max_iterations):
            err, validf = lvl.residuals(m)
            nv = float(validf.sum())
            overlap = nv / n_all
            if nv < 16:
                return m, False, (math.inf, overlap)
            o = validf @ lvl.outer
            hess = np.array([[o[0], o[1], o[2]], [o[1], o[3], o[4]], [o[2], o[4], o[5]]])
            rhs = err @ lvl.jac
            residual = float(np.abs(err).sum() / nv)
            try:
                dp = np.linalg.solve(hess, rhs)
            except np.linalg.LinAlgError:
                return m, False, (residual, overlap)
            if not np.all(np.isfinite(dp)):
                return m, False, (math.inf, overlap)
            m = m @ hg.invert(_warp_matrix(dp[0], dp[1:], lvl.center))
            if float(np.linalg.norm(dp)) < self.tolerance:
                ok = True
                break
        return m, ok, (residual, overlap)


def estimate_direct(req: EstimatorRequest, **params) -> EstimatorResult:
    return DirectEstimator(**params).estimate(req)


# --- feature-based baseline ------------------------------------------------------


def harris_corners(img: np.ndarray, max_corners: int = 200, border: int = 6,
                   sigma: float = 1.5, k: float = 0.04, rel_threshold: float = 0.01):
    """Integer ``(u, v)`` Harris corners, strongest first."""
    resp = harris_response(img, sigma, k)
    peak = resp == ndimage.maximum_filter(resp, size=5, mode="nearest")
    peak &= resp > rel_threshold * max(resp.max(), 1e-12)
    peak[:border] = peak[-border:] = False
    peak[:, :border] = peak[:, -border:] = False
    vs, us = np.nonzero(peak)
    order = np.argsort(-resp[vs, us], kind="stable")[:max_corners]
    return np.column_stack([us[order], vs[order]])


def refine_subpixel(resp: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Per-axis parabola fit through the response around integer peaks."""
    u, v = pts[:, 0], pts[:, 1]
    out = pts.astype(float)
    for axis, (lo, hi) in enumerate(((resp[v, u - 1], resp[v, u + 1]), (resp[v - 1, u], resp[v + 1, u]))):
        mid = resp[v, u]
        den = lo - 2 * mid + hi
        off = np.where(den < 0, 0.5 * (lo - hi) / np.where(den < 0, den, -1.0), 0.0)
        out[:, axis] += np.clip(off, -0.5, 0.5)
    return out


def harris_response(img: np.ndarray, sigma: float = 1.5, k: float = 0.04) -> np.ndarray:
    gx = ndimage.sobel(img, axis=1, mode="nearest")
    gy = ndimage.sobel(img, axis=0, mode="nearest")
    sxx = ndimage.gaussian_filter(gx * gx, sigma)
    syy = ndimage.gaussian_filter(gy * gy, sigma)
    sxy = ndimage.gaussian_filter(gx * gy, sigma)
    return sxx * syy - sxy * sxy - k * (sxx + syy) ** 2


def ncc_descriptors(img: np.ndarray, pts: np.ndarray, half: int = 5) -> np.ndarray:
    """Zero-mean, unit-norm ``(2*half+1)^2`` windows centred on integer points."""
    offs = np.arange(-half, half + 1)
    du, dv = np.meshgrid(offs, offs)
    win = img[pts[:, 1, None] + dv.ravel(), pts[:, 0, None] + du.ravel()]
    win = win - win.mean(axis=1, keepdims=True)
    norm = np.linalg.norm(win, axis=1, keepdims=True)
    return win / np.maximum(norm, 1e-12)


def match_ratio(desc_q: np.ndarray, desc_t: np.ndarray, ratio: float = 0.8,
                pos_q=None, pos_t=None, radius: float | None = None):
    """Nearest-neighbour matches from query to target passing the ratio test.

    With ``radius`` set, only targets within that many pixels of the query
    position compete (guided matching).
    """
    if len(desc_t) < 2:
        return np.zeros((0, 2), dtype=int)
    ncc = desc_q @ desc_t.T
    dist = np.sqrt(np.maximum(2.0 - 2.0 * ncc, 0.0))
    if radius is not None:
        gap = np.linalg.norm(pos_q[:, None, :] - pos_t[None, :, :], axis=2)
        dist[gap > radius] = np.inf
    order = np.argsort(dist, axis=1, kind="stable")
    rows = np.arange(len(desc_q))
    d1 = dist[rows, order[:, 0]]
    d2 = dist[rows, order[:, 1]]
    keep = np.isfinite(d1) & ((d1 < ratio * d2) | ~np.isfinite(d2))
    return np.column_stack([rows[keep], order[keep, 0]])


def fit_similarity(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Least-squares similarity ``dst ~ s R src + t`` as a 3x3 matrix."""
    zs = src[:, 0] + 1j * src[:, 1]
    zd = dst[:, 0] + 1j * dst[:, 1]
    a_mat = np.column_stack([zs, np.ones_like(zs)])
    (p, q), *_ = np.linalg.lstsq(a_mat, zd, rcond=None)
    return np.array([[p.real, -p.imag, q.real], [p.imag, p.real, q.imag], [0, 0, 1.0]])


@dataclass
class FeatureEstimator:
    """Harris + NCC + RANSAC similarity; a simplified stand-in for SURF matching."""

    seed: int = 0
    ransac_iterations: int = 500
    inlier_threshold: float = 2.0
    ratio: float = 0.8
    max_corners: int = 200
    min_corners: int = 8
    min_inliers: int = 4
    smoothing: float = 2.0  # Gaussian pre-filter for detection and description
    search_radius: float | None = 32.0  # None: global matching

    def estimate(self, req: EstimatorRequest) -> EstimatorResult:
        a, b = _check_request(req)
        size = a.shape[0]
        if self.smoothing > 0:
            a = ndimage.gaussian_filter(a, self.smoothing, mode="nearest")
            b = ndimage.gaussian_filter(b, self.smoothing, mode="nearest")
        ca = harris_corners(a, self.max_corners)
        cb = harris_corners(b, self.max_corners)
        if len(ca) < self.min_corners or len(cb) < self.min_corners:
            raise InsufficientFeatures(f"corners: {len(ca)} in A, {len(cb)} in B")
        matches = match_ratio(ncc_descriptors(b, cb), ncc_descriptors(a, ca), self.ratio,
                              cb, ca, self.search_radius)
        if len(matches) < self.min_inliers:
            raise InsufficientFeatures(f"only {len(matches)} ratio-test matches")
        src = refine_subpixel(harris_response(b), cb[matches[:, 0]])
        dst = refine_subpixel(harris_response(a), ca[matches[:, 1]])

        rng = np.random.default_rng(
            np.random.SeedSequence([self.seed, FEATURE_STREAM, req.frame_index, req.iteration_index])
        )
        zs = src[:, 0] + 1j * src[:, 1]
        zd = dst[:, 0] + 1j * dst[:, 1]
        best = np.zeros(len(src), dtype=bool)
        for _ in range(self.ransac_iterations):
            i, j = rng.choice(len(src), size=2, replace=False)
            dz = zs[i] - zs[j]
            if abs(dz) < 1e-9:
                continue
            p = (zd[i] - zd[j]) / dz
            q = zd[i] - p * zs[i]
            inl = np.abs(p * zs + q - zd) < self.inlier_threshold
            if inl.sum() > best.sum():
                best = inl
        if best.sum() < self.min_inliers:
            raise InsufficientFeatures(f"only {int(best.sum())} RANSAC inliers")
        h_patch = fit_similarity(src[best], dst[best])
        fp = patch_h_to_fp(h_patch, req.anchor, size)
        err = np.linalg.norm(hg.warp_points(h_patch, src[best]) - dst[best], axis=1)
        return EstimatorResult(fp, True, float(err.mean()))


def estimate_feature(req: EstimatorRequest, seed: int = 0, **params) -> EstimatorResult:
    return FeatureEstimator(seed=seed, **params).estimate(req)


# --- prediction-file adapter -----------------------------------------------------

CORNER_COLS = [f"{c}{i}" for i in range(1, 5) for c in ("u", "v")]
DISP_COLS = [f"{c}{i}" for i in range(1, 5) for c in ("du", "dv")]
REQUEST_HEADER = ["frame_index", "iteration_index"] + CORNER_COLS
PREDICTION_HEADER = REQUEST_HEADER + DISP_COLS


class PredictionTable:
    """Read-only map ``(frame_index, iteration_index) -> (anchor, fp)``."""

    def __init__(self, rows: dict | None = None):
        self._rows = dict(rows or {})

    def __len__(self):
        return len(self._rows)

    def __contains__(self, key):
        return key in self._rows

    def get(self, frame_index: int, iteration_index: int):
        return self._rows.get((frame_index, iteration_index))

    @classmethod
    def read(cls, path) -> "PredictionTable":
        rows = {}
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None or any(c not in reader.fieldnames for c in PREDICTION_HEADER):
                raise MalformedFile(f"{path}: header must contain {','.join(PREDICTION_HEADER)}")
            for lineno, rec in enumerate(reader, 2):
                try:
                    key = (int(rec["frame_index"]), int(rec["iteration_index"]))
                    anchor = np.array([float(rec[c]) for c in CORNER_COLS]).reshape(4, 2)
                    fp = np.array([float(rec[c]) for c in DISP_COLS]).reshape(4, 2)
                except (TypeError, ValueError) as exc:
                    raise MalformedFile(f"{path}:{lineno}: {exc}") from exc
                rows[key] = (anchor, fp)
        return cls(rows)

    def write(self, path) -> None:
        lines = [",".join(PREDICTION_HEADER)]
        for (k, n), (anchor, fp) in sorted(self._rows.items()):
            vals = list(np.ravel(anchor)) + list(np.ravel(fp))
            lines.append(",".join([str(k), str(n)] + [repr(float(x)) for x in vals]))
        atomic_write_text(path, "\n".join(lines) + "\n")


def write_requests(path, requests) -> None:
    """Request file for an external model: the prediction header minus du/dv."""
    lines = [",".join(REQUEST_HEADER)]
    for k, n, anchor in requests:
        lines.append(",".join([str(k), str(n)] + [repr(float(x)) for x in np.ravel(anchor)]))
    atomic_write_text(path, "\n".join(lines) + "\n")


@dataclass
class FileEstimator:
    table: PredictionTable
    anchor_tolerance: float = 1e-6

    @classmethod
    def from_path(cls, path) -> "FileEstimator":
        return cls(PredictionTable.read(Path(path)))

    def estimate(self, req: EstimatorRequest) -> EstimatorResult:
        row = self.table.get(req.frame_index, req.iteration_index)
        if row is None:
            raise MissingPrediction(
                f"no prediction for (k={req.frame_index}, n={req.iteration_index})"
            )
        anchor, fp = row
        if np.abs(anchor - np.asarray(req.anchor, dtype=float)).max() > self.anchor_tolerance:
            raise MissingPrediction(
                f"prediction for (k={req.frame_index}, n={req.iteration_index}) "
                "was made for a different patch location"
            )
        return EstimatorResult(fp.copy(), True, 0.0)


def estimate_from_file(req: EstimatorRequest, table: PredictionTable) -> EstimatorResult:
    return FileEstimator(table).estimate(req)
