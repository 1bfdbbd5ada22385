"""Homography algebra on 3x3 arrays.

Conventions used throughout the package:

* points are ``(u, v)`` with ``u`` the column (horizontal) and ``v`` the row
  (vertical, pointing down); pixel centres sit on integer coordinates;
* a quad is a ``(4, 2)`` array ordered top-left, top-right, bottom-right,
  bottom-left;
* a four-point homography is the ``(4, 2)`` array of corner displacements
  ``[[du1, dv1], ..., [du4, dv4]]``;
* a homography is a ``(3, 3)`` float array normalised to ``h33 == 1``;
* planar rotations use ``rotation(b) = [[cos b, sin b], [-sin b, cos b]]``.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .errors import (
    DegenerateQuad,
    MalformedFile,
    NearSingular,
    PointAtInfinity,
    ReflectionDetected,
    SingularMatrix,
    SingularResult,
    SingularSystem,
)
from .imaging import atomic_write_text

MIN_QUAD_AREA = 1.0
EPS_W = 1e-12
_NEXT = np.array([1, 2, 3, 0])


class SimilarityDecomposition(NamedTuple):
    """Rotation-scale-rotation factorisation of the affine part of a homography.

    The 2x2 block equals ``rotation(theta) @ diag(s_g, s_h) @ rotation(gamma)``
    and ``(t_x, t_y)`` are ``h13, h23``.
    """

    theta: float
    gamma: float
    s_g: float
    s_h: float
    t_x: float
    t_y: float


def rotation(beta: float) -> np.ndarray:
    c, s = math.cos(beta), math.sin(beta)
    return np.array([[c, s], [-s, c]])


def identity() -> np.ndarray:
    return np.eye(3)


def translation(tx: float, ty: float) -> np.ndarray:
    h = np.eye(3)
    h[0, 2] = tx
    h[1, 2] = ty
    return h


def rigid(beta: float, tx: float, ty: float, center=(0.0, 0.0)) -> np.ndarray:
    """Rotate by ``beta`` about ``center``, then translate by ``(tx, ty)``."""
    r = rotation(beta)
    c = np.asarray(center, dtype=float)
    h = np.eye(3)
    h[:2, :2] = r
    h[:2, 2] = c - r @ c + (tx, ty)
    return h


def square_quad(x0: float, y0: float, size: int) -> np.ndarray:
    """Corner quad of an axis-aligned ``size`` pixel patch with top-left at (x0, y0)."""
    e = size - 1
    return np.array(
        [[x0, y0], [x0 + e, y0], [x0 + e, y0 + e], [x0, y0 + e]], dtype=float
    )


def signed_area(quad: np.ndarray) -> float:
    q = np.asarray(quad, dtype=float)
    u, v = q[:, 0], q[:, 1]
    nxt = _NEXT if len(q) == 4 else np.roll(np.arange(len(q)), -1)
    return 0.5 * float(np.dot(u, v[nxt]) - np.dot(u[nxt], v))


def normalize(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    w = h[2, 2]
    if abs(w) < EPS_W:
        n = np.linalg.norm(h)
        if not np.isfinite(n) or n < EPS_W:
            raise SingularResult("homography has vanishing h33 and norm")
        raise SingularResult(f"h33 = {w:.3g} cannot be normalised to 1")
    out = h / w
    out[2, 2] = 1.0
    return out


def _check_quad(quad: np.ndarray, name: str) -> np.ndarray:
    q = np.asarray(quad, dtype=float)
    if q.shape != (4, 2) or not np.all(np.isfinite(q)):
        raise DegenerateQuad(f"{name} must be a finite (4, 2) array")
    area = signed_area(q)
    if abs(area) < MIN_QUAD_AREA:
        raise DegenerateQuad(f"{name} has signed area {area:.3g} px^2")
    return q


def dlt(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Exact homography mapping 4 source corners onto 4 destination corners.

    Solves the 8x8 inhomogeneous system with h33 fixed to 1. Both point sets
    are centred and scaled first; the result is mapped back and renormalised.
    """
    src = _check_quad(src, "source quad")
    dst = _check_quad(dst, "destination quad")
    ts, tsi = _similarity_normaliser(src)
    td, tdi = _similarity_normaliser(dst)
    s = src @ ts[:2, :2].T + ts[:2, 2]
    d = dst @ td[:2, :2].T + td[:2, 2]

    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i in range(4):
        u, v = s[i]
        up, vp = d[i]
        a[2 * i] = [u, v, 1, 0, 0, 0, -u * up, -v * up]
        a[2 * i + 1] = [0, 0, 0, u, v, 1, -u * vp, -v * vp]
        b[2 * i] = up
        b[2 * i + 1] = vp
    if np.linalg.cond(a) > 1e12:
        raise SingularSystem("DLT system is rank-deficient (collinear corners?)")
    try:
        x = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    hn = np.append(x, 1.0).reshape(3, 3)
    return normalize(tdi @ hn @ ts)


def _similarity_normaliser(pts):
    c = pts.mean(axis=0)
    scale = math.sqrt(2.0) / np.mean(np.linalg.norm(pts - c, axis=1))
    t = np.array([[scale, 0, -scale * c[0]], [0, scale, -scale * c[1]], [0, 0, 1.0]])
    ti = np.array([[1 / scale, 0, c[0]], [0, 1 / scale, c[1]], [0, 0, 1.0]])
    return t, ti


def four_point_to_matrix(anchor: np.ndarray, fp: np.ndarray) -> np.ndarray:
    """Convert corner displacements ``fp`` anchored at ``anchor`` to a 3x3 matrix."""
    anchor = np.asarray(anchor, dtype=float)
    fp = np.asarray(fp, dtype=float)
    if fp.shape != (4, 2) or not np.all(np.isfinite(fp)):
        raise ValueError("four-point homography must be a finite (4, 2) array")
    return dlt(anchor, anchor + fp)


def matrix_to_four_point(h: np.ndarray, anchor: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    if not np.all(np.isfinite(h)):
        raise ValueError("homography contains non-finite entries")
    if abs(np.linalg.det(h)) < 1e-300:
        raise SingularMatrix("homography is not invertible")
    anchor = np.asarray(anchor, dtype=float)
    return warp_points(h, anchor) - anchor


def compose(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Homography ``x -> a(b(x))``."""
    return normalize(np.asarray(a, dtype=float) @ np.asarray(b, dtype=float))


def compose_all(hs: Iterable[np.ndarray]) -> np.ndarray:
    out = np.eye(3)
    for h in hs:
        out = compose(out, h)
    return out


def invert(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    det = np.linalg.det(h)
    if not np.isfinite(det) or abs(det) < 1e-300:
        raise SingularMatrix("homography is singular")
    try:
        return normalize(np.linalg.inv(h))
    except np.linalg.LinAlgError as exc:
        raise SingularMatrix(str(exc)) from exc


def warp_points(h: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Apply ``h`` to an ``(n, 2)`` array of points."""
    pts = np.asarray(pts, dtype=float)
    x = pts @ h[:2, :2].T + h[:2, 2]
    w = pts @ h[2, :2] + h[2, 2]
    if np.any(np.abs(w) < EPS_W):
        raise PointAtInfinity("point maps to infinity")
    return x / w[:, None]


def warp_point(h: np.ndarray, p) -> tuple[float, float]:
    u, v = warp_points(h, np.asarray(p, dtype=float).reshape(1, 2))[0]
    return float(u), float(v)


def _wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.remainder(a, 2 * math.pi)
    if a <= -math.pi:
        a += 2 * math.pi
    return a


def decompose_similarity(h: np.ndarray) -> SimilarityDecomposition:
    """SVD of the affine 2x2 block in closed form; perspective terms ignored.

    Canonical form: ``s_g >= s_h > 0``, both rotation factors proper,
    ``gamma`` in ``[-pi/2, pi/2)`` and ``theta`` in ``(-pi, pi]``. When the
    singular values coincide (to 1e-9 relative) ``gamma`` is 0 and ``theta``
    is the rotation angle of the block's polar factor.
    """
    h = np.asarray(h, dtype=float)
    a, b, c, d = h[0, 0], h[0, 1], h[1, 0], h[1, 1]
    if not np.all(np.isfinite(h[:2, :3])):
        raise NearSingular("non-finite homography")
    if a * d - b * c <= 0:
        raise ReflectionDetected(f"2x2 block determinant {a * d - b * c:.3g} <= 0")
    e = (a + d) / 2
    f = (a - d) / 2
    g = (c + b) / 2
    k = (c - b) / 2
    q = math.hypot(e, k)
    r = math.hypot(f, g)
    s_g, s_h = q + r, q - r
    if s_h < 1e-9:
        raise NearSingular(f"smaller singular value {s_h:.3g}")
    # standard-rotation angles: block = Rot(phi) diag Rot(psi), Rot(x) = rotation(-x)
    a_sum = math.atan2(k, e)
    if s_g - s_h < 1e-9 * s_g:
        theta, gamma = -a_sum, 0.0
    else:
        a_diff = math.atan2(g, f)
        theta = -(a_sum + a_diff) / 2
        gamma = -(a_sum - a_diff) / 2
        gamma = _wrap_angle(gamma)
        if gamma >= math.pi / 2:
            gamma -= math.pi
            theta -= math.pi
        elif gamma < -math.pi / 2:
            gamma += math.pi
            theta += math.pi
    return SimilarityDecomposition(
        _wrap_angle(theta), gamma, s_g, s_h, float(h[0, 2]), float(h[1, 2])
    )


def recompose_similarity(d: SimilarityDecomposition) -> np.ndarray:
    theta, gamma, s_g, s_h, t_x, t_y = d
    h = np.eye(3)
    h[:2, :2] = rotation(theta) @ np.diag([s_g, s_h]) @ rotation(gamma)
    h[0, 2] = t_x
    h[1, 2] = t_y
    return h


# text format: one homography per line, 9 floats row-major, '#' comments


def format_homography(h: np.ndarray) -> str:
    return " ".join(repr(float(x)) for x in np.asarray(h, dtype=float).ravel())


def write_homographies(path, hs, header: str | Iterable[str] = ()) -> None:
    lines = [header] if isinstance(header, str) else list(header)
    out = [f"# {line}" for line in lines]
    out += [format_homography(h) for h in hs]
    atomic_write_text(path, "\n".join(out) + "\n")


def read_homographies(path) -> list[np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise MalformedFile(f"missing homography file: {path}")
    hs = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            vals = [float(x) for x in line.split()]
        except ValueError as exc:
            raise MalformedFile(f"{path}:{lineno}: {exc}") from exc
        if len(vals) != 9 or not all(math.isfinite(x) for x in vals):
            raise MalformedFile(f"{path}:{lineno}: expected 9 finite floats")
        h = np.array(vals).reshape(3, 3)
        if abs(h[2, 2] - 1.0) > 1e-12:
            raise MalformedFile(f"{path}:{lineno}: h33 must equal 1")
        hs.append(h)
    return hs
