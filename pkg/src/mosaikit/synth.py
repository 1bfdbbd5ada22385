"""Synthetic planar sequences with exact ground-truth homographies.

Frame ``k`` samples a large texture through the rigid map ``T_k`` (frame
pixel coordinates to texture coordinates): the camera centre moves along the
trajectory and the view rotates by ``rotation_per_frame`` every frame. Since
``f_{k+1}(x) = f_k(T_k^-1 T_{k+1} x)``, ``gt_relative[k] = T_k^-1 T_{k+1}``
maps frame ``k+1`` coordinates into frame ``k`` and
``gt_absolute[k] = T_0^-1 T_k`` maps frame ``k`` into the reference frame 0.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import homography as hg
from .errors import MalformedFile, TextureTooSmall
from .imaging import atomic_write_text, bilinear, list_images, read_png, write_png

KINDS = ("circular", "spiral", "linear")
DEGRADE_STREAM = 0xDE6


# --- procedural textures -------------------------------------------------------


def _rescale(img: np.ndarray, lo: float, hi: float) -> np.ndarray:
    a, b = float(img.min()), float(img.max())
    return lo + (img - a) * (hi - lo) / max(b - a, 1e-12)


def smooth_noise(size: int, rng: np.random.Generator, sigmas=(24.0, 8.0, 3.0),
                 weights=(1.0, 0.5, 0.25)) -> np.ndarray:
    out = np.zeros((size, size))
    for s, w in zip(sigmas, weights):
        layer = ndimage.gaussian_filter(rng.standard_normal((size, size)), s, mode="wrap")
        out += w * layer / layer.std()
    return out


def vessel_texture(size: int = 2048, seed: int = 0, n_vessels: int | None = None) -> np.ndarray:
    """Placenta-like texture: smooth background with dark branching curves."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7E47]))
    base = _rescale(smooth_noise(size, rng), 90.0, 190.0)
    vessels = np.zeros((size, size))
    n_vessels = n_vessels if n_vessels is not None else max(8, size // 24)
    steps = size // 2
    for _ in range(n_vessels):
        p = rng.uniform(0, size, 2)
        heading = rng.uniform(0, 2 * math.pi)
        width = rng.uniform(1.5, 5.0)
        turn = rng.normal(0, 0.08, steps).cumsum() * 0.15
        ang = heading + turn
        pts = p + np.column_stack([np.cos(ang), np.sin(ang)]).cumsum(axis=0)
        pts = pts[(pts >= 0).all(axis=1) & (pts < size).all(axis=1)].astype(int)
        vessels[pts[:, 1], pts[:, 0]] = np.maximum(vessels[pts[:, 1], pts[:, 0]], width)
    # splat each centre-line pixel into a disc proportional to its width
    thick = ndimage.grey_dilation(vessels, size=(5, 5))
    profile = ndimage.gaussian_filter((thick > 0).astype(float) * thick, 2.0)
    tex = base - 60.0 * profile / max(profile.max(), 1e-12)
    return np.clip(ndimage.gaussian_filter(tex, 1.0), 20.0, 235.0)


def checkerboard_texture(size: int = 512, square: int = 48, seed: int = 0,
                         noise: float = 12.0) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC4EC]))
    g = np.arange(size)
    board = ((g[:, None] // square + g[None, :] // square) % 2).astype(float)
    img = 70.0 + 110.0 * ndimage.gaussian_filter(board, 2.0)
    img += noise * ndimage.gaussian_filter(rng.standard_normal((size, size)), 2.0) * 2.0
    return np.clip(img, 0.0, 255.0)


def ramp_texture(size: int = 512, seed: int = 0, noise: float = 25.0) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x4A3B]))
    u = np.arange(size, dtype=float)
    ramp = np.broadcast_to(60.0 + 120.0 * u / (size - 1), (size, size))
    tex = ramp + noise * _rescale(smooth_noise(size, rng, (6.0, 2.0), (1.0, 0.5)), -1, 1)
    return np.clip(tex, 0.0, 255.0)


def make_texture(kind: str = "vessel", size: int = 2048, seed: int = 0) -> np.ndarray:
    if kind == "vessel":
        return vessel_texture(size, seed)
    if kind == "checkerboard":
        return checkerboard_texture(size, seed=seed)
    if kind == "ramp":
        return ramp_texture(size, seed)
    raise ValueError(f"unknown texture kind {kind!r}")


# --- trajectories -----------------------------------------------------------------


@dataclass(frozen=True)
class TrajectoryConfig:
    kind: str = "circular"
    frames: int = 811
    frame_size: int = 256
    radius_px: float = 300.0
    radius_growth_px_per_frame: float = 0.0
    rotation_per_frame: float = math.radians(1.0)
    angular_step: float = 2 * math.pi / 360  # orbit step per frame (circular/spiral)
    step_px: float = 1.0  # speed along +u (linear)
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {', '.join(KINDS)}")
        if self.frames < 2:
            raise ValueError("frames >= 2 required")
        if self.frame_size < 64:
            raise ValueError("frame_size >= 64 required")
        if self.kind != "linear" and self.radius_px < 0:
            raise ValueError("radius must be non-negative")


def camera_maps(cfg: TrajectoryConfig, texture_shape) -> list[np.ndarray]:
    """Rigid maps ``T_k`` from frame pixels to texture pixels."""
    cfg.validate()
    th, tw = texture_shape
    centre = np.array([(tw - 1) / 2.0, (th - 1) / 2.0])
    fc = (cfg.frame_size - 1) / 2.0
    k = np.arange(cfg.frames, dtype=float)
    if cfg.kind == "linear":
        span = cfg.step_px * (cfg.frames - 1)
        pos = np.column_stack([centre[0] - span / 2 + cfg.step_px * k, np.full_like(k, centre[1])])
    else:
        r = cfg.radius_px + (cfg.radius_growth_px_per_frame * k if cfg.kind == "spiral" else 0.0)
        phi = cfg.angular_step * k
        pos = centre + np.column_stack([r * np.cos(phi), r * np.sin(phi)])
    maps = []
    for i in range(cfg.frames):
        t = np.eye(3)
        rot = hg.rotation(cfg.rotation_per_frame * i)
        t[:2, :2] = rot
        t[:2, 2] = pos[i] - rot @ (fc, fc)
        maps.append(t)
    return maps


@dataclass
class SyntheticSequence:
    frames: list[np.ndarray]
    gt_absolute: list[np.ndarray]
    gt_relative: list[np.ndarray]
    config: dict = field(default_factory=dict)


def generate(texture: np.ndarray, cfg: TrajectoryConfig) -> SyntheticSequence:
    texture = np.asarray(texture, dtype=np.float64)
    maps = camera_maps(cfg, texture.shape)
    s = cfg.frame_size
    e = s - 1.0
    corners = np.array([[0, 0], [e, 0], [e, e], [0, e]])
    th, tw = texture.shape
    for i, t in enumerate(maps):
        c = hg.warp_points(t, corners)
        if c.min() < 0 or c[:, 0].max() > tw - 1 or c[:, 1].max() > th - 1:
            raise TextureTooSmall(
                f"frame {i} leaves the {tw}x{th} texture; enlarge it or shrink the trajectory"
            )
    g = np.arange(s, dtype=float)
    uu, vv = np.meshgrid(g, g)
    grid = np.column_stack([uu.ravel(), vv.ravel()])
    frames = []
    for t in maps:
        p = grid @ t[:2, :2].T + t[:2, 2]
        frames.append(bilinear(texture, p[:, 0], p[:, 1]).reshape(s, s))
    t0i = hg.invert(maps[0])
    absolute = [hg.compose(t0i, t) for t in maps]
    absolute[0] = np.eye(3)
    relative = [hg.compose(hg.invert(maps[i]), maps[i + 1]) for i in range(len(maps) - 1)]
    conf = asdict(cfg)
    conf["texture_size"] = f"{tw}x{th}"
    return SyntheticSequence(frames, absolute, relative, conf)


# --- degradations -----------------------------------------------------------------


@dataclass(frozen=True)
class DegradationSpec:
    noise_sigma: float = 0.0
    vignette: float = 0.0  # fractional darkening at the frame corners
    specular_blobs: int = 0
    blob_radius: float = 14.0
    blob_strength: float = 0.9
    blob_drift: float = 2.0  # px per frame; 0 keeps blobs static
    seed: int = 0

    @property
    def empty(self) -> bool:
        return self.noise_sigma == 0 and self.vignette == 0 and self.specular_blobs == 0


def blob_tracks(spec: DegradationSpec, frames: int, size: int) -> np.ndarray:
    """Blob centres, shape ``(frames, blobs, 2)``: random walks reflected at the edges."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, DEGRADE_STREAM, 1]))
    start = rng.uniform(0.15 * size, 0.85 * size, (spec.specular_blobs, 2))
    ang = rng.uniform(0, 2 * math.pi, spec.specular_blobs)
    steps = rng.normal(0, 0.3, (frames, spec.specular_blobs)).cumsum(axis=0) + ang
    vel = spec.blob_drift * np.stack([np.cos(steps), np.sin(steps)], axis=-1)
    vel[0] = 0.0
    raw = start + vel.cumsum(axis=0)
    span = size - 1.0
    folded = np.mod(raw, 2 * span)
    return np.where(folded > span, 2 * span - folded, folded)


def add_degradations(seq: SyntheticSequence, spec: DegradationSpec) -> SyntheticSequence:
    """Vignette, specular highlights and sensor noise; ground truth untouched."""
    if spec.empty:
        return replace(seq, frames=[f.copy() for f in seq.frames])
    h, w = seq.frames[0].shape
    vv, uu = np.mgrid[0:h, 0:w].astype(float)
    cu, cv = (w - 1) / 2.0, (h - 1) / 2.0
    rr = ((uu - cu) ** 2 + (vv - cv) ** 2) / (cu ** 2 + cv ** 2)
    gain = 1.0 - spec.vignette * rr
    tracks = blob_tracks(spec, len(seq.frames), min(h, w)) if spec.specular_blobs else None
    out = []
    for k, f in enumerate(seq.frames):
        g = f * gain if spec.vignette else f.copy()
        if tracks is not None:
            alpha = np.zeros_like(g)
            for bu, bv in tracks[k]:
                d2 = (uu - bu) ** 2 + (vv - bv) ** 2
                a = spec.blob_strength * np.exp(-d2 / (2 * (spec.blob_radius / 2) ** 2))
                a[d2 > spec.blob_radius ** 2] = 0.0
                alpha = np.maximum(alpha, a)
            g = g + (255.0 - g) * alpha
        if spec.noise_sigma:
            rng = np.random.default_rng(np.random.SeedSequence([spec.seed, DEGRADE_STREAM, 2, k]))
            g = g + rng.normal(0.0, spec.noise_sigma, g.shape)
        out.append(np.clip(g, 0.0, 255.0))
    conf = dict(seq.config)
    conf.update({f"degrade_{k}": v for k, v in asdict(spec).items()})
    return SyntheticSequence(out, seq.gt_absolute, seq.gt_relative, conf)


# --- I/O ----------------------------------------------------------------------------


def write_sequence(seq: SyntheticSequence, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for k, f in enumerate(seq.frames):
        write_png(out / f"frame_{k:06d}.png", f)
    hg.write_homographies(out / "gt_absolute.txt", seq.gt_absolute,
                          "ground truth: frame k -> frame 0")
    hg.write_homographies(out / "gt_relative.txt", seq.gt_relative,
                          "ground truth: frame k+1 -> frame k")
    manifest = out / "manifest.txt"
    lines = [f"frames: {len(seq.frames)}"] + [f"{k}: {v}" for k, v in sorted(seq.config.items())]
    atomic_write_text(manifest, "\n".join(lines) + "\n")
    return manifest


def read_frames(directory) -> list[np.ndarray]:
    paths = list_images(directory)
    if not paths:
        raise MalformedFile(f"no images in {directory}")
    return [read_png(p) for p in paths]


def read_manifest(path) -> dict:
    conf = {}
    for line in Path(path).read_text().splitlines():
        if ":" in line:
            key, val = line.split(":", 1)
            conf[key.strip()] = val.strip()
    return conf


def read_sequence(directory) -> SyntheticSequence:
    d = Path(directory)
    frames = read_frames(d)
    absolute = hg.read_homographies(d / "gt_absolute.txt")
    relative = hg.read_homographies(d / "gt_relative.txt")
    if len(absolute) != len(frames) or len(relative) != len(frames) - 1:
        raise MalformedFile(
            f"{d}: {len(frames)} frames but {len(absolute)} absolute / {len(relative)} relative poses"
        )
    conf = read_manifest(d / "manifest.txt") if (d / "manifest.txt").is_file() else {}
    return SyntheticSequence(frames, absolute, relative, conf)
