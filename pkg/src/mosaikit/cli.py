"""Command-line front end.

Exit codes: 0 success, 1 I/O error, 2 invalid arguments or inputs,
3 estimation failure, 4 divergence guard (canvas cap exceeded).
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import cda, compositor, metrics, sequential, synth
from . import homography as hg
from .errors import (
    CanvasTooLarge,
    DegenerateInput,
    EmptyOverlap,
    FrameTooSmall,
    InsufficientFeatures,
    LengthMismatch,
    MalformedFile,
    MaskOutsideFrame,
    MissingPrediction,
    MosaicError,
    SizeMismatch,
    TextureTooSmall,
    TooFewValid,
)
from .estimators import DirectEstimator, EstimatorRequest, FeatureEstimator, FileEstimator, write_requests
from .imaging import list_images, read_png, resize, write_png

log = logging.getLogger("mosaikit")

EXIT_OK, EXIT_IO, EXIT_ARGS, EXIT_ESTIMATION, EXIT_DIVERGED = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


def _fail(code: int, msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def _mask(args) -> compositor.FovMask:
    return compositor.FovMask(kind=args.mask)


def load_frames(directory, crop_fov: bool = False, frame_size: int = 256) -> list[np.ndarray]:
    paths = list_images(directory)
    if not paths:
        raise UsageError(f"no images found in {directory}")
    frames = [read_png(p) for p in paths]
    if crop_fov:
        circ = compositor.FovMask(kind="circular")
        frames = [compositor.crop_square_from_circle(f, circ, frame_size) for f in frames]
    return frames


def make_estimator(spec: str, seed: int):
    if spec == "direct":
        return DirectEstimator()
    if spec == "feature":
        return FeatureEstimator(seed=seed)
    if spec.startswith("file:"):
        return FileEstimator.from_path(spec[5:])
    raise UsageError(f"unknown estimator {spec!r}; use direct, feature or file:<path>")


# --- gen-synth -------------------------------------------------------------------


def cmd_gen_synth(args) -> int:
    cfg = synth.TrajectoryConfig(
        kind=args.kind,
        frames=args.frames,
        frame_size=args.frame_size,
        radius_px=args.radius,
        radius_growth_px_per_frame=args.radius_growth,
        rotation_per_frame=math.radians(args.rotation_per_frame),
        angular_step=math.radians(args.angular_step),
        step_px=args.step,
        seed=args.seed,
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.texture_image:
        texture = read_png(args.texture_image)
    else:
        texture = synth.make_texture(args.texture, args.texture_size, args.seed)
    seq = synth.generate(texture, cfg)
    spec = synth.DegradationSpec(
        noise_sigma=args.noise_sigma,
        vignette=args.vignette,
        specular_blobs=args.specular_blobs,
        seed=args.seed,
    )
    seq = synth.add_degradations(seq, spec)
    seq.config["texture"] = args.texture_image or args.texture
    out = Path(args.out)
    synth.write_sequence(seq, out)
    print(f"frames: {len(seq.frames)}")
    print(f"gt_absolute: {out / 'gt_absolute.txt'}")
    print(f"gt_relative: {out / 'gt_relative.txt'}")
    return EXIT_OK


# --- gen-cda ---------------------------------------------------------------------


def cmd_gen_cda(args) -> int:
    cfg = cda.CdaConfig(args.patch_size, args.beta_max, args.shift_max, args.margin, args.seed)
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.count < 1:
        raise UsageError("count >= 1 required")
    paths = list_images(args.images)
    if not paths:
        raise UsageError(f"no images found in {args.images}")
    frames = [read_png(p) for p in paths]
    if args.frame_size:
        frames = [f if f.shape == (args.frame_size,) * 2 else resize(f, args.frame_size) for f in frames]
    manifest = cda.export_dataset(frames, cfg, args.count, args.out)
    bad = cda.check_labels(cda.read_labels(manifest.labels))
    print(f"manifest: {manifest.path}")
    print(f"pairs: {manifest.count}")
    if bad:
        return _fail(EXIT_ESTIMATION, f"{len(bad)} labels fail the rigid-motion self-check: {bad[:10]}")
    print("labels: consistent")
    return EXIT_OK


# --- mosaic ----------------------------------------------------------------------


def _sequential_config(args, frame_shape) -> sequential.SequentialConfig:
    if args.full_frame:
        return sequential.SequentialConfig(1, min(frame_shape), 0, args.seed, args.reference, 1)
    return sequential.SequentialConfig(
        args.n, args.patch_size, args.margin, args.seed, args.reference, min(args.min_valid, args.n)
    )


def emit_requests(frames, cfg: sequential.SequentialConfig, out_dir) -> Path:
    out = Path(out_dir)
    patches = out / "patches"
    patches.mkdir(parents=True, exist_ok=True)
    rows = []
    for k in range(len(frames) - 1):
        for n, anchor in enumerate(sequential.patch_anchors(frames[k].shape, cfg, k)):
            write_png(patches / f"pair_{k:06d}_{n:03d}_a.png", sequential.crop(frames[k], anchor))
            write_png(patches / f"pair_{k:06d}_{n:03d}_b.png", sequential.crop(frames[k + 1], anchor))
            rows.append((k, n, anchor))
    path = out / "requests.csv"
    write_requests(path, rows)
    return path


def cmd_mosaic(args) -> int:
    frames = load_frames(args.frames, args.crop_fov, args.frame_size)
    shape = frames[0].shape
    if any(f.shape != shape for f in frames):
        raise UsageError("all frames must have the same size")
    cfg = _sequential_config(args, shape)
    try:
        cfg.validate(shape)
    except (ValueError, FrameTooSmall) as exc:
        raise UsageError(str(exc)) from exc

    if args.emit_requests:
        path = emit_requests(frames, cfg, args.emit_requests)
        print(f"requests: {path}")
        return EXIT_OK

    if args.poses_in:
        poses = sequential.read_poses(args.poses_in)
        if len(poses.absolute) != len(frames):
            raise UsageError(f"{len(poses.absolute)} poses for {len(frames)} frames")
    elif len(frames) == 1:
        poses = sequential.SequencePoses([], [np.eye(3)], 0)
    else:
        estimator = make_estimator(args.estimator, args.seed)
        try:
            poses = sequential.run_sequence(frames, estimator, cfg, workers=args.workers)
        except TooFewValid as exc:
            return _fail(EXIT_ESTIMATION, f"{exc} (failing pair index {exc.pair_index})")
        except MissingPrediction as exc:
            return _fail(EXIT_ESTIMATION, f"MissingPrediction: {exc}")

    if args.poses_out:
        sequential.write_poses(args.poses_out, poses, cfg)
    if args.diagnostics_out and poses.diagnostics:
        sequential.write_diagnostics(args.diagnostics_out, poses.diagnostics)
    try:
        mosaic = compositor.render(frames, poses.absolute, _mask(args), args.blend, int(args.canvas_cap))
    except CanvasTooLarge as exc:
        return _fail(EXIT_DIVERGED, str(exc))
    out = Path(args.out)
    write_png(out, mosaic.canvas)
    hg.write_homographies(out.with_name(out.stem + "_offset.txt"), [mosaic.offset],
                          "offset: reference frame -> canvas")
    if args.coverage_out:
        cov = mosaic.coverage.astype(float)
        write_png(args.coverage_out, 255.0 * cov / max(cov.max(), 1.0))

    print(f"frames: {len(frames)}")
    if poses.diagnostics:
        total = sum(len(d.estimates) for d in poses.diagnostics)
        valid = sum(d.valid_count for d in poses.diagnostics)
        worst = min(poses.diagnostics, key=lambda d: d.valid_count)
        print(f"valid estimates: {valid}/{total} ({100.0 * valid / total:.1f}%), "
              f"lowest {worst.valid_count} at pair {worst.pair_index}")
    h, w = mosaic.canvas.shape
    print(f"canvas: {w}x{h}")
    print(f"mosaic: {out}")
    return EXIT_OK


# --- evaluate --------------------------------------------------------------------


def _named_paths(items):
    out = {}
    for i, item in enumerate(items):
        name, sep, path = item.partition("=")
        if not sep:
            name, path = (f"run{i}" if len(items) > 1 else ""), item
        out[name] = path
    return out


def _pair_predictions(dataset_dir, estimator):
    pairs = []
    for a, b, row in cda.read_dataset(dataset_dir):
        req = EstimatorRequest(a, b, row.anchor, row.idx, 0)
        try:
            res = estimator.estimate(req)
            pred = res.fp
        except (DegenerateInput, InsufficientFeatures):
            pred = np.zeros((4, 2))
        pairs.append((pred, row.gt))
    return pairs


def cmd_evaluate(args) -> int:
    if not args.gt and not args.pairs:
        raise UsageError("--gt or --pairs is required")
    runs = _named_paths(args.poses or [])
    if args.gt and not runs:
        raise UsageError("--poses is required with --gt")
    gt = hg.read_homographies(args.gt) if args.gt else None
    frames = load_frames(args.frames) if args.frames else None
    pairs = None
    if args.pairs:
        pairs = _pair_predictions(args.pairs, make_estimator(args.estimator, args.seed))

    curves = {}
    reports = {}
    for name, path in (runs.items() if runs else [("", None)]):
        absolute = sequential.read_poses(path).absolute if path else None
        rep = metrics.evaluate_sequence(frames, absolute, gt, pairs, _mask(args))
        reports[name] = rep
        if rep.residual is not None:
            curves[name] = rep.residual
    for name, rep in reports.items():
        prefix = f"{name}: " if name else ""
        print(prefix + rep.summary())
    if args.curve_out and curves:
        if len(curves) == 1:
            metrics.write_residual_csv(args.curve_out, next(iter(curves.values())))
        else:
            metrics.write_residual_csv(args.curve_out, curves)
        print(f"curve: {args.curve_out}")
    if args.summary_out:
        lines = [(f"{n}: " if n else "") + r.summary() for n, r in reports.items()]
        Path(args.summary_out).write_text("\n".join(lines) + "\n")
    return EXIT_OK


# --- parser ----------------------------------------------------------------------


class _Formatter(argparse.ArgumentDefaultsHelpFormatter):
    def _get_help_string(self, action):
        if action.default is None or action.default is False or action.default is argparse.SUPPRESS:
            return action.help
        return super()._get_help_string(action)


def build_parser() -> argparse.ArgumentParser:
    fmt = _Formatter
    p = argparse.ArgumentParser(prog="mosaikit", description=__doc__, formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="count", default=0, help="repeat for more logging")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", help="render a synthetic sequence with ground truth", formatter_class=fmt)
    g.add_argument("--kind", choices=synth.KINDS, default="circular", help="camera trajectory")
    g.add_argument("--frames", type=int, default=811, help="number of frames")
    g.add_argument("--frame-size", type=int, default=256, help="square frame side, px")
    g.add_argument("--radius", type=float, default=300.0, help="orbit radius in texture pixels")
    g.add_argument("--radius-growth", type=float, default=0.5, help="spiral radius growth, px/frame")
    g.add_argument("--angular-step", type=float, default=1.0, help="orbit step, degrees/frame")
    g.add_argument("--rotation-per-frame", type=float, default=1.0, help="in-plane view rotation, degrees/frame")
    g.add_argument("--step", type=float, default=1.0, help="linear speed, px/frame")
    g.add_argument("--texture", choices=("vessel", "checkerboard", "ramp"), default="vessel",
                   help="procedural texture")
    g.add_argument("--texture-size", type=int, default=2048, help="procedural texture side, px")
    g.add_argument("--texture-image", help="grayscale image to use instead of a procedural texture")
    g.add_argument("--noise-sigma", type=float, default=0.0, help="additive Gaussian noise std")
    g.add_argument("--specular-blobs", type=int, default=0, help="number of drifting bright blobs")
    g.add_argument("--vignette", type=float, default=0.0, help="fractional darkening at the corners")
    g.add_argument("--seed", type=int, default=0, help="random seed")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_synth)

    c = sub.add_parser("gen-cda", help="export a controlled-augmentation training set", formatter_class=fmt)
    c.add_argument("images", help="directory of grayscale training images")
    c.add_argument("--count", type=int, default=1000, help="number of patch pairs")
    c.add_argument("--patch-size", type=int, default=128, help="patch side, px")
    c.add_argument("--beta-max", type=float, default=5.0, help="rotation range, degrees")
    c.add_argument("--shift-max", type=float, default=16.0, help="translation range, px")
    c.add_argument("--margin", type=int, default=32, help="anchor distance from the frame border, px")
    c.add_argument("--frame-size", type=int, default=256, help="resize inputs to this square size (0 = keep)")
    c.add_argument("--seed", type=int, default=0, help="random seed")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_gen_cda)

    m = sub.add_parser("mosaic", help="estimate poses and render a mosaic", formatter_class=fmt)
    m.add_argument("frames", help="directory of frames, processed in sorted filename order")
    m.add_argument("--estimator", default="direct", help="direct, feature or file:<predictions.csv>")
    m.add_argument("--n", type=int, default=99, help="random patch pairs per adjacent frame pair")
    m.add_argument("--patch-size", type=int, default=128, help="patch side, px")
    m.add_argument("--margin", type=int, default=32, help="anchor distance from the frame border, px")
    m.add_argument("--min-valid", type=int, default=50, help="valid estimates required per pair")
    m.add_argument("--reference", type=int, default=0, help="index of the reference frame")
    m.add_argument("--full-frame", action="store_true",
                   help="one whole-frame estimate per pair (no outlier rejection)")
    m.add_argument("--blend", choices=compositor.BLENDS, default="overwrite_last", help="compositing rule")
    m.add_argument("--mask", choices=("full", "circular"), default="full", help="field-of-view mask")
    m.add_argument("--crop-fov", action="store_true",
                   help="crop the square inscribed in the circular field of view first")
    m.add_argument("--frame-size", type=int, default=256, help="working size after --crop-fov")
    m.add_argument("--seed", type=int, default=0, help="random seed")
    m.add_argument("--out", default="mosaic.png", help="mosaic PNG; the canvas offset goes next to it")
    m.add_argument("--poses-out")
    m.add_argument("--poses-in", help="render from an existing pose file instead of estimating")
    m.add_argument("--diagnostics-out")
    m.add_argument("--coverage-out")
    m.add_argument("--emit-requests", metavar="DIR",
                   help="write patch requests for an external model and stop")
    m.add_argument("--canvas-cap", type=float, default=float(compositor.DEFAULT_CANVAS_CAP),
                   help="abort when the canvas would exceed this many pixels")
    m.add_argument("--workers", type=int, default=None, help="process count (default MOSAIKIT_THREADS or CPU count)")
    m.set_defaults(func=cmd_mosaic)

    e = sub.add_parser("evaluate", help="residual, RMSE and photometric metrics", formatter_class=fmt)
    e.add_argument("--poses", action="append", help="pose file, optionally name=path; repeatable")
    e.add_argument("--gt", help="ground-truth absolute poses")
    e.add_argument("--frames", help="frame directory for the photometric error")
    e.add_argument("--pairs", help="CDA dataset directory for corner RMSE")
    e.add_argument("--estimator", default="direct", help="estimator applied to --pairs")
    e.add_argument("--mask", choices=("full", "circular"), default="full", help="field-of-view mask")
    e.add_argument("--seed", type=int, default=0, help="random seed for the feature estimator")
    e.add_argument("--curve-out", help="residual curve CSV")
    e.add_argument("--summary-out")
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        return _fail(EXIT_ARGS, str(exc))
    except (LengthMismatch, SizeMismatch, FrameTooSmall, TextureTooSmall, MaskOutsideFrame,
            EmptyOverlap, ValueError) as exc:
        return _fail(EXIT_ARGS, f"{type(exc).__name__}: {exc}")
    except CanvasTooLarge as exc:
        return _fail(EXIT_DIVERGED, str(exc))
    except (MalformedFile, OSError) as exc:
        return _fail(EXIT_IO, f"{type(exc).__name__}: {exc}")
    except MosaicError as exc:
        return _fail(EXIT_ESTIMATION, f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
