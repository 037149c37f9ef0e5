"""Distance-and-angle spatial consistency and spectral inlier scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateSet,
    DegenerateVector,
    LengthMismatch,
    TooFewMatches,
    ZeroDenominator,
)
from .geometry import WeightedMatchSet


@dataclass(frozen=True)
class ConsistencyParams:
    sigma_d: float = 0.4
    sigma_alpha: float = 1.0
    lambda_c: float = 0.5
    k_nn: int = 3


@dataclass
class CompatibilityMatrix:
    e_mat: np.ndarray
    params: ConsistencyParams


def normalize_pairwise_distances(points) -> np.ndarray:
    """Pairwise Euclidean distances divided by their mean over unordered pairs."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 2:
        raise DegenerateSet("need at least two points")
    d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    iu = np.triu_indices(len(pts), 1)
    mean = d[iu].mean()
    if mean <= 0:
        raise DegenerateSet("all points coincide")
    return d / mean


def distance_compat(d_t, d_i, sigma_d: float = 0.4):
    """[1 - (d_t/d_i - 1)^2 / sigma_d^2]_+ ; broadcasts over arrays."""
    d_t = np.asarray(d_t, dtype=np.float64)
    d_i = np.asarray(d_i, dtype=np.float64)
    if np.any(d_i == 0):
        raise ZeroDenominator("image-side distance is zero")
    out = np.maximum(1.0 - (d_t / d_i - 1.0) ** 2 / sigma_d**2, 0.0)
    return out if out.ndim else float(out)


def angular_compat(c_t, c_i, sigma_alpha: float = 1.0):
    out = np.maximum(1.0 - (np.asarray(c_t, dtype=np.float64) - c_i) ** 2 / sigma_alpha**2, 0.0)
    return out if out.ndim else float(out)


def _unsigned_angle(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Angle in [0, pi] between the last-axis vectors u and v."""
    cross = u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]
    dot = (u * v).sum(axis=-1)
    return np.abs(np.arctan2(cross, dot))


def knn_indices(points: np.ndarray, k: int) -> np.ndarray:
    """(K, k) indices of the k nearest other points (stable order: distance, then index)."""
    d = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=2)
    np.fill_diagonal(d, np.inf)
    return np.argsort(d, axis=1, kind="stable")[:, :k]


def angle_property(a: int, b: int, t_pts, i_pts, k_nn: int = 3, neighbors=None) -> tuple[float, float]:
    """Max angle between (p_a - p_x) and (p_a - p_b) over the k nearest neighbors x of a.

    Neighbors are found on the template side and reused (by match index) on the
    image side, so both angles describe the same triplets.
    """
    t_pts = np.asarray(t_pts, dtype=np.float64).reshape(-1, 2)
    i_pts = np.asarray(i_pts, dtype=np.float64).reshape(-1, 2)
    if len(t_pts) < k_nn + 1:
        raise TooFewMatches(f"need at least {k_nn + 1} matches for {k_nn} neighbors")
    nbrs = knn_indices(t_pts, k_nn)[a] if neighbors is None else np.asarray(neighbors)
    out = []
    for pts in (t_pts, i_pts):
        to_b = pts[a] - pts[b]
        to_x = pts[a] - pts[nbrs]
        if not np.any(to_b) or not np.all(np.any(to_x, axis=1)):
            raise DegenerateVector("coincident points in angle computation")
        out.append(float(_unsigned_angle(to_x, to_b[None, :]).max()))
    return out[0], out[1]


def _angle_table(pts: np.ndarray, nbrs: np.ndarray) -> np.ndarray:
    """c[a, b] = max_x angle(p_a - p_x, p_a - p_b) for all ordered pairs."""
    to_b = pts[:, None, :] - pts[None, :, :]  # (K, K, 2): p_a - p_b
    to_x = pts[:, None, :] - pts[nbrs]  # (K, k, 2): p_a - p_x
    if np.any(~np.any(to_x, axis=2)):
        raise DegenerateVector("coincident points in angle computation")
    ang = _unsigned_angle(to_x[:, None, :, :], to_b[:, :, None, :])  # (K, K, k)
    return ang.max(axis=2)


def build_compat_matrix(t_pts, i_pts, params: ConsistencyParams = ConsistencyParams()) -> CompatibilityMatrix:
    """E(a, b) = lambda_c * alpha + (1 - lambda_c) * beta, symmetric, zero diagonal."""
    t_pts = np.asarray(t_pts, dtype=np.float64).reshape(-1, 2)
    i_pts = np.asarray(i_pts, dtype=np.float64).reshape(-1, 2)
    if len(t_pts) != len(i_pts):
        raise LengthMismatch("template and image point counts differ")
    k = len(t_pts)
    if k < 2:
        raise TooFewMatches("need at least two matches")
    dt = normalize_pairwise_distances(t_pts)
    di = normalize_pairwise_distances(i_pts)
    off = ~np.eye(k, dtype=bool)
    if np.any((dt == 0) & off) or np.any((di == 0) & off):
        raise DegenerateVector("two matches share a point")

    lo = np.where(off, np.minimum(dt, di), 1.0)
    ratio = np.where(off, np.maximum(dt, di), 1.0) / lo
    beta = np.maximum(1.0 - (ratio - 1.0) ** 2 / params.sigma_d**2, 0.0)

    k_eff = min(params.k_nn, k - 1)
    nbrs = knn_indices(t_pts, k_eff)
    ct = _angle_table(t_pts, nbrs)
    ci = _angle_table(i_pts, nbrs)
    alpha_dir = np.maximum(1.0 - (ct - ci) ** 2 / params.sigma_alpha**2, 0.0)
    alpha = 0.5 * (alpha_dir + alpha_dir.T)

    e = params.lambda_c * alpha + (1.0 - params.lambda_c) * beta
    e[~off] = 0.0
    return CompatibilityMatrix(e, params)


@dataclass
class InlierScores:
    e: np.ndarray  # non-negative, max-normalized


def leading_eigenvector(cm, iters: int = 50, tol: float = 1e-8) -> InlierScores:
    """Power iteration from the uniform vector; |v| max-normalized into [0, 1]."""
    e_mat = cm.e_mat if isinstance(cm, CompatibilityMatrix) else np.asarray(cm, dtype=np.float64)
    k = e_mat.shape[0]
    v = np.full(k, 1.0 / np.sqrt(k))
    for _ in range(iters):
        nxt = e_mat @ v
        norm = np.linalg.norm(nxt)
        if norm == 0:
            return InlierScores(np.ones(k))
        nxt /= norm
        done = np.linalg.norm(nxt - v) < tol * np.linalg.norm(v)
        v = nxt
        if done:
            break
    v = np.abs(v)
    return InlierScores(v / v.max())


def combine_weights(t_pts, i_pts, s, e) -> WeightedMatchSet:
    s = np.asarray(s, dtype=np.float64)
    e = np.asarray(getattr(e, "e", e), dtype=np.float64)
    if len(s) != len(e) or len(s) != len(np.asarray(t_pts).reshape(-1, 2)):
        raise LengthMismatch("scores, inlier scores and matches differ in length")
    return WeightedMatchSet(t_pts, i_pts, s, e)
