"""N-patch robust pairwise estimation, median outlier rejection and chaining.

For an adjacent pair ``(f_k, f_{k+1})``, ``N`` co-located patch pairs are
drawn at random, each is passed through an estimator, the four-point output
is turned into a frame-coordinate homography and decomposed into
``(theta, gamma, s_g, s_h, t_x, t_y)``. The estimate whose ``theta`` is the
(lower) median of the valid set is recomposed as the pair's homography, so
every returned parameter comes from one single iteration.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import homography as hg
from .cda import draw_anchor
from .errors import FrameTooSmall, MissingPrediction, MosaicError, TooFewValid
from .estimators import EstimatorRequest
from .imaging import atomic_write_text

log = logging.getLogger(__name__)

SEQ_STREAM = 0x5E9


@dataclass(frozen=True)
class SequentialConfig:
    n_iterations: int = 99
    patch_size: int = 128
    margin: int = 32
    seed: int = 0
    reference_index: int = 0
    min_valid: int = 50

    def validate(self, frame_shape=None) -> None:
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")
        if not 1 <= self.min_valid <= self.n_iterations:
            raise ValueError("min_valid must be in [1, n_iterations]")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        if frame_shape is not None and self.patch_size + 2 * self.margin > min(frame_shape):
            raise FrameTooSmall(
                f"frames {frame_shape[1]}x{frame_shape[0]} cannot hold a "
                f"{self.patch_size}px patch with {self.margin}px margins"
            )


@dataclass
class PairwiseEstimate:
    iteration: int
    anchor: np.ndarray
    decomposition: hg.SimilarityDecomposition | None
    homography: np.ndarray | None
    valid: bool
    reason: str = ""


@dataclass
class PairDiagnostics:
    pair_index: int
    estimates: list[PairwiseEstimate]
    selected: int | None = None

    @property
    def valid_count(self) -> int:
        return sum(e.valid for e in self.estimates)


@dataclass
class SequencePoses:
    relative: list[np.ndarray]
    absolute: list[np.ndarray]
    reference_index: int = 0
    diagnostics: list[PairDiagnostics] = field(default_factory=list)


def pair_rng(seed: int, k: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, SEQ_STREAM, k]))


def patch_anchors(frame_shape, cfg: SequentialConfig, k: int) -> list[np.ndarray]:
    """The ``N`` anchors drawn for pair ``k``; a pure function of ``(seed, k)``."""
    rng = pair_rng(cfg.seed, k)
    return [draw_anchor(rng, frame_shape, cfg.patch_size, cfg.margin) for _ in range(cfg.n_iterations)]


def crop(frame: np.ndarray, anchor: np.ndarray) -> np.ndarray:
    x0, y0 = (int(round(c)) for c in anchor[0])
    size = int(round(anchor[1, 0] - anchor[0, 0])) + 1
    return frame[y0 : y0 + size, x0 : x0 + size]


def lower_median_index(values: Sequence[float]) -> int:
    """Position of the ceil(m/2)-th smallest value; ties resolve to the earliest."""
    if len(values) == 0:
        raise ValueError("median of an empty set")
    order = np.argsort(np.asarray(values, dtype=float), kind="stable")
    return int(order[(len(values) + 1) // 2 - 1])


def evaluate_estimate(result, anchor: np.ndarray, iteration: int) -> PairwiseEstimate:
    if not result.converged:
        return PairwiseEstimate(iteration, anchor, None, None, False, "not converged")
    if not np.all(np.isfinite(result.fp)):
        return PairwiseEstimate(iteration, anchor, None, None, False, "non-finite")
    try:
        h = hg.four_point_to_matrix(anchor, result.fp)
        dec = hg.decompose_similarity(h)
    except MosaicError as exc:
        return PairwiseEstimate(iteration, anchor, None, None, False, type(exc).__name__)
    if not all(math.isfinite(x) for x in dec):
        return PairwiseEstimate(iteration, anchor, None, None, False, "non-finite")
    return PairwiseEstimate(iteration, anchor, dec, h, True)


def select_consistent(estimates: Sequence[PairwiseEstimate]) -> int:
    """Iteration index whose theta is the lower median over the valid estimates."""
    valid = [e for e in estimates if e.valid]
    i = lower_median_index([e.decomposition.theta for e in valid])
    return valid[i].iteration


def estimate_pair_robust(f_k: np.ndarray, f_k1: np.ndarray, estimator,
                         cfg: SequentialConfig, k: int = 0):
    """Consistent homography mapping frame ``k+1`` into frame ``k``.

    Returns ``(homography, PairDiagnostics)``. Estimator failures (exceptions
    from the estimator's own error family, non-convergence, reflections,
    non-finite output) mark that iteration invalid; fewer than
    ``cfg.min_valid`` valid iterations raise :class:`TooFewValid`.
    """
    f_k = np.asarray(f_k, dtype=float)
    f_k1 = np.asarray(f_k1, dtype=float)
    if f_k.shape != f_k1.shape:
        raise ValueError("adjacent frames must have the same size")
    cfg.validate(f_k.shape)
    estimates = []
    for n, anchor in enumerate(patch_anchors(f_k.shape, cfg, k)):
        req = EstimatorRequest(crop(f_k, anchor), crop(f_k1, anchor), anchor, k, n)
        try:
            result = estimator.estimate(req)
        except (MosaicError, np.linalg.LinAlgError) as exc:
            if _is_fatal(exc):
                raise
            estimates.append(PairwiseEstimate(n, anchor, None, None, False, type(exc).__name__))
            continue
        estimates.append(evaluate_estimate(result, anchor, n))
    diag = PairDiagnostics(k, estimates)
    if diag.valid_count < cfg.min_valid:
        raise TooFewValid(k, diag.valid_count, cfg.min_valid)
    diag.selected = select_consistent(estimates)
    h = hg.recompose_similarity(estimates[diag.selected].decomposition)
    return h, diag


def _is_fatal(exc: Exception) -> bool:
    # a missing external prediction is a protocol error, not a noisy estimate
    return isinstance(exc, MissingPrediction)


def chain(relatives: Sequence[np.ndarray], reference_index: int = 0) -> SequencePoses:
    """Absolute poses (frame ``k`` to reference) from frame-(k+1)-to-k relatives."""
    n = len(relatives) + 1
    if not 0 <= reference_index < n:
        raise ValueError(f"reference index {reference_index} outside [0, {n})")
    absolute: list[np.ndarray | None] = [None] * n
    absolute[reference_index] = np.eye(3)
    for k in range(reference_index, n - 1):
        absolute[k + 1] = hg.compose(absolute[k], relatives[k])
    for k in range(reference_index - 1, -1, -1):
        absolute[k] = hg.compose(absolute[k + 1], hg.invert(relatives[k]))
    return SequencePoses([np.asarray(r, dtype=float) for r in relatives], absolute, reference_index)


def thread_count() -> int:
    env = os.environ.get("MOSAIKIT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer MOSAIKIT_THREADS=%r", env)
    return os.cpu_count() or 1


def _pair_job(args):
    f_k, f_k1, estimator, cfg, k = args
    return estimate_pair_robust(f_k, f_k1, estimator, cfg, k)


def run_sequence(frames: Sequence[np.ndarray], estimator, cfg: SequentialConfig,
                 workers: int | None = None) -> SequencePoses:
    """Robust pairwise estimation over every adjacent pair, then chaining.

    Pairs are independent and keyed by ``(seed, k)``, so the result does not
    depend on ``workers``. A :class:`TooFewValid` failure carries the index of
    the failing pair.
    """
    if len(frames) < 2:
        raise ValueError("at least 2 frames are required")
    shape = np.shape(frames[0])
    if any(np.shape(f) != shape for f in frames):
        raise ValueError("all frames must have the same size")
    cfg.validate(shape)
    workers = thread_count() if workers is None else workers
    jobs = [(frames[k], frames[k + 1], estimator, cfg, k) for k in range(len(frames) - 1)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_pair_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = []
        for job in jobs:
            results.append(_pair_job(job))
            if job[4] % 50 == 0:
                log.info("pair %d/%d", job[4] + 1, len(jobs))
    poses = chain([h for h, _ in results], cfg.reference_index)
    poses.diagnostics = [d for _, d in results]
    return poses


# --- files ----------------------------------------------------------------------


def write_poses(path, poses: SequencePoses, cfg: SequentialConfig | None = None) -> None:
    header = [f"reference_index={poses.reference_index}", "absolute poses: frame k -> reference"]
    if cfg is not None:
        header.append(
            " ".join(f"{k}={v}" for k, v in vars(cfg).items())
        )
    hg.write_homographies(path, poses.absolute, header)


def read_poses(path, reference_index: int | None = None) -> SequencePoses:
    """Absolute poses from a pose file; relatives are re-derived from them."""
    absolute = hg.read_homographies(path)
    if reference_index is None:
        reference_index = 0
        with open(path) as f:
            for line in f:
                if line.startswith("#") and "reference_index=" in line:
                    reference_index = int(line.split("reference_index=")[1].split()[0])
                    break
    relative = [hg.compose(hg.invert(absolute[k]), absolute[k + 1]) for k in range(len(absolute) - 1)]
    return SequencePoses(relative, absolute, reference_index)


DIAG_HEADER = "k,n,valid,theta,gamma,s_g,s_h,t_x,t_y,selected"


def write_diagnostics(path, diagnostics: Sequence[PairDiagnostics]) -> None:
    lines = [DIAG_HEADER]
    for d in diagnostics:
        for e in d.estimates:
            vals = e.decomposition if e.valid else [math.nan] * 6
            row = [str(d.pair_index), str(e.iteration), str(int(e.valid))]
            row += [repr(float(x)) for x in vals]
            row.append(str(int(e.iteration == d.selected)))
            lines.append(",".join(row))
    atomic_write_text(path, "\n".join(lines) + "\n")
