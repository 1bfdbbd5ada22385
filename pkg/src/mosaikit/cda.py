"""Controlled data augmentation: rigid-motion patch pairs with exact labels.

A patch ``P_A`` is cropped at a random axis-aligned location; its corners are
rotated about their centroid by ``beta`` and shifted by ``(d_x, d_y)``, and
``P_B`` is resampled from the same frame through the homography taking the
original corners onto the moved ones. ``P_B(x) = I(H(x))`` over ``P_A``'s grid,
so an estimator that recovers ``H`` from ``(P_A, P_B)`` reproduces the label.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import homography as hg
from .errors import FrameTooSmall, OutOfBounds
from .imaging import as_frame, atomic_write_text, bilinear, in_bounds, read_png, write_png

CDA_STREAM = 0xCDA

LABEL_HEADER = (
    ["idx"]
    + [f"{c}{i}" for i in range(1, 5) for c in ("u", "v")]
    + [f"{c}{i}" for i in range(1, 5) for c in ("du", "dv")]
    + ["beta_deg", "dx", "dy"]
)


class MotionParams(NamedTuple):
    beta: float  # radians
    d_x: float
    d_y: float


@dataclass
class PatchPair:
    patch_a: np.ndarray
    patch_b: np.ndarray
    anchor: np.ndarray
    gt: np.ndarray | None = None
    motion: MotionParams | None = None


@dataclass(frozen=True)
class CdaConfig:
    patch_size: int = 128
    beta_max: float = 5.0  # degrees
    shift_max: float = 16.0
    margin: int = 32
    seed: int = 0

    def validate(self, frame_shape=None) -> None:
        if self.patch_size < 8:
            raise ValueError("patch_size must be at least 8")
        if self.beta_max < 0 or self.shift_max < 0 or self.margin < 0:
            raise ValueError("beta_max, shift_max and margin must be non-negative")
        need = math.ceil(
            self.shift_max + self.patch_size * math.sin(math.radians(self.beta_max))
        )
        if self.margin < need:
            raise ValueError(
                f"margin {self.margin} too small for the motion range, need >= {need}"
            )
        if frame_shape is not None:
            side = self.patch_size + 2 * self.margin
            if side > min(frame_shape):
                raise FrameTooSmall(
                    f"frame {frame_shape[1]}x{frame_shape[0]} cannot hold a "
                    f"{self.patch_size}px patch with {self.margin}px margins"
                )


def pair_rng(seed: int, idx: int, stream: int = CDA_STREAM) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream, idx]))


def apply_motion(anchor: np.ndarray, m: MotionParams) -> np.ndarray:
    """Rotate the quad about its centroid by ``m.beta`` then shift by ``(d_x, d_y)``."""
    q = np.asarray(anchor, dtype=float)
    c = q.mean(axis=0)
    r = hg.rotation(m.beta)
    return (q - c) @ r.T + c + (m.d_x, m.d_y)


def motion_homography(anchor: np.ndarray, m: MotionParams) -> np.ndarray:
    """Exact rigid homography taking ``anchor`` to ``apply_motion(anchor, m)``."""
    c = np.asarray(anchor, dtype=float).mean(axis=0)
    return hg.rigid(m.beta, m.d_x, m.d_y, center=c)


def _integer_square(quad: np.ndarray, size: int):
    x0, y0 = quad[0]
    if x0 != round(x0) or y0 != round(y0):
        return None
    if np.array_equal(quad, hg.square_quad(x0, y0, size)):
        return int(x0), int(y0)
    return None


def sample_patch(frame: np.ndarray, quad: np.ndarray, patch_size: int) -> np.ndarray:
    """Resample the ``patch_size`` square grid mapped onto ``quad``.

    Output pixel ``(x, y)`` is the bilinear sample of ``frame`` at
    ``H_quad(x, y)`` where ``H_quad`` takes the canonical patch corners onto
    ``quad``. An axis-aligned quad at integer position is an exact crop.
    """
    quad = np.asarray(quad, dtype=float)
    h, w = frame.shape
    if not np.all(in_bounds(frame.shape, quad[:, 0], quad[:, 1])):
        raise OutOfBounds("patch quad leaves the frame")
    corner = _integer_square(quad, patch_size)
    if corner is not None:
        x0, y0 = corner
        return frame[y0 : y0 + patch_size, x0 : x0 + patch_size].copy()
    canon = hg.square_quad(0, 0, patch_size)
    hq = hg.dlt(canon, quad)
    g = np.arange(patch_size, dtype=float)
    uu, vv = np.meshgrid(g, g)
    pts = hg.warp_points(hq, np.column_stack([uu.ravel(), vv.ravel()]))
    return bilinear(frame, pts[:, 0], pts[:, 1]).reshape(patch_size, patch_size)


def draw_anchor(rng: np.random.Generator, frame_shape, patch_size: int, margin: int):
    h, w = frame_shape
    x0 = int(rng.integers(margin, w - margin - patch_size + 1))
    y0 = int(rng.integers(margin, h - margin - patch_size + 1))
    return hg.square_quad(x0, y0, patch_size)


def draw_motion(rng: np.random.Generator, cfg: CdaConfig) -> MotionParams:
    b = math.radians(cfg.beta_max)
    return MotionParams(
        float(rng.uniform(-b, b)),
        float(rng.uniform(-cfg.shift_max, cfg.shift_max)),
        float(rng.uniform(-cfg.shift_max, cfg.shift_max)),
    )


def generate_pair(
    frame: np.ndarray,
    cfg: CdaConfig,
    rng: np.random.Generator,
    motion: MotionParams | None = None,
) -> PatchPair:
    """Draw one labelled pair; ``motion`` overrides the random draw when given."""
    frame = as_frame(frame)
    cfg.validate(frame.shape)
    anchor = draw_anchor(rng, frame.shape, cfg.patch_size, cfg.margin)
    m = draw_motion(rng, cfg)
    if motion is not None:
        m = MotionParams(*motion)
    moved = apply_motion(anchor, m)
    patch_a = sample_patch(frame, anchor, cfg.patch_size)
    patch_b = sample_patch(frame, moved, cfg.patch_size)
    return PatchPair(patch_a, patch_b, anchor, moved - anchor, m)


def generate_pairs(frames: Sequence[np.ndarray], cfg: CdaConfig, count: int):
    """Yield ``count`` pairs; pair ``i`` depends only on ``(cfg.seed, i)``."""
    for idx in range(count):
        rng = pair_rng(cfg.seed, idx)
        j = int(rng.integers(len(frames))) if len(frames) > 1 else 0
        yield generate_pair(frames[j], cfg, rng)


@dataclass
class DatasetManifest:
    out_dir: Path
    labels: Path
    files: list[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    count: int = 0

    @property
    def path(self) -> Path:
        return self.out_dir / "manifest.json"


def _label_row(idx: int, pair: PatchPair) -> list[str]:
    m = pair.motion or MotionParams(0.0, 0.0, 0.0)
    vals = list(pair.anchor.ravel()) + list(pair.gt.ravel())
    vals += [math.degrees(m.beta), m.d_x, m.d_y]
    return [str(idx)] + [f"{float(v):.9g}" for v in vals]


def export_dataset(
    frames: Sequence[np.ndarray], cfg: CdaConfig, count: int, out_dir
) -> DatasetManifest:
    if count < 1:
        raise ValueError("count must be >= 1")
    if not frames:
        raise ValueError("at least one frame is required")
    frames = [as_frame(f) for f in frames]
    for f in frames:
        cfg.validate(f.shape)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [LABEL_HEADER]
    files = []
    for idx, pair in enumerate(generate_pairs(frames, cfg, count)):
        for tag, img in (("a", pair.patch_a), ("b", pair.patch_b)):
            name = f"pair_{idx:06d}_{tag}.png"
            write_png(out / name, img)
            files.append(name)
        rows.append(_label_row(idx, pair))
    labels = out / "labels.csv"
    atomic_write_text(labels, "\n".join(",".join(r) for r in rows) + "\n")
    manifest = DatasetManifest(out, labels, files, asdict(cfg), count)
    doc = {"count": count, "config": manifest.config, "labels": labels.name, "files": files}
    atomic_write_text(manifest.path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return manifest


@dataclass
class LabelRow:
    idx: int
    anchor: np.ndarray
    gt: np.ndarray
    beta_deg: float
    dx: float
    dy: float


def read_labels(path) -> list[LabelRow]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != LABEL_HEADER:
            raise ValueError(f"unexpected labels header in {path}")
        out = []
        for row in reader:
            vals = np.array([float(x) for x in row[1:]])
            out.append(
                LabelRow(
                    int(row[0]), vals[:8].reshape(4, 2), vals[8:16].reshape(4, 2),
                    vals[16], vals[17], vals[18],
                )
            )
    return out


def read_dataset(out_dir):
    """Load ``(patch_a, patch_b, LabelRow)`` triples from an exported dataset."""
    d = Path(out_dir)
    items = []
    for row in read_labels(d / "labels.csv"):
        a = read_png(d / f"pair_{row.idx:06d}_a.png")
        b = read_png(d / f"pair_{row.idx:06d}_b.png")
        items.append((a, b, row))
    return items


def check_labels(rows: Sequence[LabelRow], tol: float = 1e-6) -> list[int]:
    """Indices whose label disagrees with the rigid motion it records.

    The homography re-derived from the stored corners must be rigid and must
    move the anchor exactly like ``(beta_deg, dx, dy)``.
    """
    bad = []
    for row in rows:
        m = MotionParams(math.radians(row.beta_deg), row.dx, row.dy)
        expect = apply_motion(row.anchor, m) - row.anchor
        try:
            h = hg.four_point_to_matrix(row.anchor, row.gt)
            dec = hg.decompose_similarity(h)
        except Exception:
            bad.append(row.idx)
            continue
        rigid_ok = abs(dec.s_g - 1) < 1e-6 and abs(dec.s_h - 1) < 1e-6
        if not rigid_ok or np.abs(expect - row.gt).max() > tol:
            bad.append(row.idx)
    return bad
