"""Homographies, weighted DLT, reprojection error and the AUC metric.

Coordinates are continuous image coordinates: pixel ``(col, row)`` covers
``[col, col + 1) x [row, row + 1)``, so its center sits at ``(col + 0.5, row + 0.5)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    DegeneratePoint,
    EmptyInput,
    InsufficientMatches,
    InvalidRange,
    LengthMismatch,
    RankDeficient,
    SingularMatrix,
)

_DET_EPS = 1e-12
_DENOM_EPS = 1e-12


def canonicalize(m: np.ndarray) -> np.ndarray:
    """Unit Frobenius norm, non-negative m[2, 2] (first non-zero entry when it is 0)."""
    m = np.asarray(m, dtype=np.float64)
    norm = np.linalg.norm(m)
    if norm == 0 or not np.isfinite(norm):
        raise SingularMatrix("homography matrix is zero or not finite")
    m = m / norm
    pivot = m[2, 2]
    if pivot == 0:
        flat = m.ravel()
        pivot = flat[np.flatnonzero(flat)[0]]
    return -m if pivot < 0 else m


@dataclass(frozen=True)
class Homography:
    """A 3x3 projective transform stored in canonical form."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"homography must be 3x3, got {m.shape}")
        m = canonicalize(m)
        if abs(np.linalg.det(m)) <= _DET_EPS:
            raise SingularMatrix("homography is not invertible")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Homography":
        return cls(np.array([[1.0, 0, tx], [0, 1.0, ty], [0, 0, 1.0]]))

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography(self.m @ other.m)

    def __call__(self, pts) -> np.ndarray:
        return apply_homography(self, pts)

    def distance(self, other: "Homography") -> float:
        """Frobenius distance between canonical forms."""
        return float(np.linalg.norm(self.m - other.m))

    def to_text(self) -> str:
        return " ".join(repr(float(v)) for v in self.m.ravel()) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Homography":
        vals = [float(t) for t in text.split()]
        if len(vals) != 9:
            raise ValueError(f"expected 9 numbers, got {len(vals)}")
        return cls(np.array(vals).reshape(3, 3))


def apply_homography(h: Homography, p) -> np.ndarray:
    """Map a point (2,) or an array of points (N, 2) through ``h``."""
    pts = np.asarray(p, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    m = h.m
    x = m[0, 0] * pts[:, 0] + m[0, 1] * pts[:, 1] + m[0, 2]
    y = m[1, 0] * pts[:, 0] + m[1, 1] * pts[:, 1] + m[1, 2]
    z = m[2, 0] * pts[:, 0] + m[2, 1] * pts[:, 1] + m[2, 2]
    if np.any(np.abs(z) <= _DENOM_EPS):
        raise DegeneratePoint("point maps to infinity")
    out = np.stack([x / z, y / z], axis=1)
    return out[0] if single else out


def invert(h: Homography) -> Homography:
    try:
        inv = np.linalg.inv(h.m)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrix(str(exc)) from exc
    return Homography(inv)


@dataclass(frozen=True)
class PointMatch:
    p_t: tuple[float, float]
    p_i: tuple[float, float]


@dataclass
class WeightedMatchSet:
    """Correspondences template -> image with feature score ``s``, consistency ``e``.

    The combined weight ``w = s * e`` is derived, never stored independently.
    """

    template_pts: np.ndarray
    image_pts: np.ndarray
    s: np.ndarray
    e: np.ndarray
    w: np.ndarray = field(init=False)

    def __post_init__(self):
        self.template_pts = np.asarray(self.template_pts, dtype=np.float64).reshape(-1, 2)
        self.image_pts = np.asarray(self.image_pts, dtype=np.float64).reshape(-1, 2)
        n = len(self.template_pts)
        self.s = np.broadcast_to(np.asarray(self.s, dtype=np.float64), (n,)).copy()
        self.e = np.broadcast_to(np.asarray(self.e, dtype=np.float64), (n,)).copy()
        if len(self.image_pts) != n:
            raise LengthMismatch("template and image point counts differ")
        if not (np.all(np.isfinite(self.template_pts)) and np.all(np.isfinite(self.image_pts))):
            raise ValueError("match coordinates must be finite")
        self.w = self.s * self.e

    @classmethod
    def uniform(cls, template_pts, image_pts) -> "WeightedMatchSet":
        return cls(template_pts, image_pts, 1.0, 1.0)

    def __len__(self) -> int:
        return len(self.template_pts)

    @property
    def matches(self) -> list[PointMatch]:
        return [PointMatch(tuple(a), tuple(b)) for a, b in zip(self.template_pts, self.image_pts)]


def hartley_normalization(pts: np.ndarray) -> np.ndarray:
    """Similarity taking ``pts`` to centroid 0 and mean distance sqrt(2)."""
    centroid = pts.mean(axis=0)
    mean_dist = np.linalg.norm(pts - centroid, axis=1).mean()
    if mean_dist <= 0:
        raise RankDeficient("all points coincide")
    s = np.sqrt(2.0) / mean_dist
    return np.array([[s, 0, -s * centroid[0]], [0, s, -s * centroid[1]], [0, 0, 1.0]])


def _to_h(pts: np.ndarray) -> np.ndarray:
    return np.column_stack([pts, np.ones(len(pts))])


def dlt_weighted(ms: WeightedMatchSet) -> Homography:
    """Weighted least-squares DLT: minimizes sum_k w_k * |A_k h|^2 with |h| = 1."""
    w = np.asarray(ms.w, dtype=np.float64)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    use = w > 0
    if use.sum() < 4:
        raise InsufficientMatches(f"need 4 weighted matches, got {int(use.sum())}")
    src, dst, w = ms.template_pts[use], ms.image_pts[use], w[use]

    t_src = hartley_normalization(src)
    t_dst = hartley_normalization(dst)
    xs = _to_h(src) @ t_src.T
    xd = _to_h(dst) @ t_dst.T

    n = len(xs)
    a = np.zeros((2 * n, 9))
    u, v = xd[:, 0], xd[:, 1]
    a[0::2, 0:3] = xs
    a[0::2, 6:9] = -u[:, None] * xs
    a[1::2, 3:6] = xs
    a[1::2, 6:9] = -v[:, None] * xs
    a *= np.repeat(np.sqrt(w / w.max()), 2)[:, None]

    _, sv, vt = np.linalg.svd(a)
    if len(sv) < 8 or sv[7] <= 1e-10 * sv[0]:
        raise RankDeficient("design matrix has rank < 8 (collinear or repeated points)")
    hn = vt[-1].reshape(3, 3)
    m = np.linalg.inv(t_dst) @ hn @ t_src
    try:
        return Homography(m)
    except SingularMatrix as exc:
        raise RankDeficient(str(exc)) from exc


def reprojection_errors(h_est: Homography, h_gt: Homography, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        raise EmptyInput("no measurement points")
    return np.linalg.norm(apply_homography(h_est, pts) - apply_homography(h_gt, pts), axis=1)


def auc(per_sample_errors: Sequence[float], threshold: float) -> float:
    """Clipped-linear area under the cumulative error curve, in percent.

    Each sample contributes ``max(0, 1 - err / threshold)``; infinite errors count as 0.
    """
    errs = np.asarray(per_sample_errors, dtype=np.float64).ravel()
    if errs.size == 0:
        raise EmptyInput("no errors to aggregate")
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if np.any(errs < 0) or np.any(np.isnan(errs)):
        raise ValueError("errors must be non-negative")
    return float(100.0 * np.mean(np.clip(1.0 - errs / threshold, 0.0, 1.0)))


@dataclass(frozen=True)
class PerturbationConfig:
    """Ranges for synthetic ground-truth homographies (frame is width x height)."""

    width: int = 640
    height: int = 480
    scale_range: tuple[float, float] = (0.8, 1.2)
    rotation_deg: tuple[float, float] = (-15.0, 15.0)
    corner_px: float = 32.0

    def validate(self):
        lo, hi = self.scale_range
        if not (0 < lo <= hi):
            raise InvalidRange(f"scale range must lie in (0, inf), got {self.scale_range}")
        if self.rotation_deg[0] > self.rotation_deg[1]:
            raise InvalidRange(f"empty rotation range {self.rotation_deg}")
        if self.corner_px < 0:
            raise InvalidRange("corner perturbation bound must be >= 0")
        if self.width <= 0 or self.height <= 0:
            raise InvalidRange("frame size must be positive")


def frame_corners(width: float, height: float) -> np.ndarray:
    return np.array([[0.0, 0.0], [width, 0.0], [width, height], [0.0, height]])


def corner_perturbation_homography(width: float, height: float, offsets) -> Homography:
    """Exact 4-point homography moving the frame corners by ``offsets`` (4, 2)."""
    corners = frame_corners(width, height)
    moved = corners + np.asarray(offsets, dtype=np.float64).reshape(4, 2)
    return dlt_weighted(WeightedMatchSet.uniform(corners, moved))


def similarity_about(center, scale: float, angle_rad: float) -> Homography:
    cx, cy = center
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    to_origin = np.array([[1.0, 0, -cx], [0, 1.0, -cy], [0, 0, 1.0]])
    rs = np.array([[scale * c, -scale * s, 0], [scale * s, scale * c, 0], [0, 0, 1.0]])
    back = np.array([[1.0, 0, cx], [0, 1.0, cy], [0, 0, 1.0]])
    return Homography(back @ rs @ to_origin)


def sample_gt_homography(rng_seed, cfg: PerturbationConfig = PerturbationConfig()) -> Homography:
    """Center-anchored scale and rotation followed by a random 4-corner perturbation."""
    cfg.validate()
    rng = np.random.default_rng(rng_seed)
    scale = rng.uniform(*cfg.scale_range)
    angle = np.deg2rad(rng.uniform(*cfg.rotation_deg))
    offsets = rng.uniform(-cfg.corner_px, cfg.corner_px, size=(4, 2))
    sim = similarity_about((cfg.width / 2.0, cfg.height / 2.0), scale, angle)
    warp = corner_perturbation_homography(cfg.width, cfg.height, offsets)
    return warp @ sim
