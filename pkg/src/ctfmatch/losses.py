"""Coarse and fine matching objectives, evaluated as plain functions (no training)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coarse import AssignmentMatrix
from .errors import EmptyGroundTruth, LengthMismatch
from .geometry import Homography, apply_homography, invert

LOG_FLOOR = 1e-12
VAR_FLOOR = 1e-6
LOSS_WEIGHT = 10.0


@dataclass
class GroundTruthCoarse:
    """Template rows paired with flat image-cell columns, plus unmatched template rows."""

    pairs: np.ndarray  # (P, 2) int: (template row, image column = gy * grid_w + gx)
    unmatched: np.ndarray  # template rows whose reprojection leaves the image grid

    def __len__(self) -> int:
        return len(self.pairs)


def gt_coarse_matches(h_gt: Homography, template_cells, grid_dims, stride: int = 8) -> GroundTruthCoarse:
    """Reproject template cell centers through ``h_gt`` and snap to the image cell containing them."""
    cells = np.asarray(template_cells, dtype=np.float64).reshape(-1, 2)
    grid_w, grid_h = (int(v) for v in grid_dims)
    centers = cells * stride + stride / 2.0
    # a center mapped to infinity just falls off the grid
    m = h_gt.m
    hom = np.column_stack([centers, np.ones(len(centers))]) @ m.T
    z = hom[:, 2]
    ok = np.abs(z) > 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        proj = hom[:, :2] / np.where(ok, z, 1.0)[:, None]
    g = np.floor(proj / stride)
    inside = ok & np.all(np.isfinite(g), axis=1)
    inside &= (g[:, 0] >= 0) & (g[:, 0] < grid_w) & (g[:, 1] >= 0) & (g[:, 1] < grid_h)
    rows = np.arange(len(cells))
    gi = g[inside].astype(np.int64)
    pairs = np.column_stack([rows[inside], gi[:, 1] * grid_w + gi[:, 0]]).astype(np.int64)
    return GroundTruthCoarse(pairs.reshape(-1, 2), rows[~inside])


def coarse_loss(c: AssignmentMatrix, gt: GroundTruthCoarse, method: str | None = None) -> float:
    """Mean negative log confidence over ground-truth pairs; OT adds the dustbin term over unmatched rows."""
    method = c.method if method is None else method
    if len(gt.pairs) == 0:
        raise EmptyGroundTruth("no ground-truth coarse pairs")
    conf = np.asarray(c.c, dtype=np.float64)
    vals = conf[gt.pairs[:, 0], gt.pairs[:, 1]]
    loss = float(np.mean(-np.log(np.maximum(vals, LOG_FLOOR))))
    if method == "OT" and len(gt.unmatched):
        if c.dustbin_row is None:
            raise ValueError("OT loss needs the dustbin column of the assignment")
        bins = np.asarray(c.dustbin_row, dtype=np.float64)[gt.unmatched]
        loss += float(np.mean(-np.log(np.maximum(bins, LOG_FLOOR))))
    return loss


def fine_loss(fine, gt_positions, template_windows, warped_windows, masks) -> float:
    """Variance-weighted position error plus masked appearance difference, each averaged over matches.

    ``fine`` holds FineMatch records whose ``j_prime`` and ``variance`` are compared
    with ``gt_positions`` in the same frame. Windows are per-match arrays of equal
    shape; ``masks`` broadcast against them (a scalar per match is fine).
    """
    gt = np.asarray(gt_positions, dtype=np.float64).reshape(-1, 2)
    n = len(fine)
    if not (len(gt) == len(template_windows) == len(warped_windows) == len(masks) == n):
        raise LengthMismatch("fine matches, targets, windows and masks differ in length")
    if n == 0:
        return 0.0
    jp = np.array([f.j_prime for f in fine], dtype=np.float64)
    var = np.maximum(np.array([f.variance for f in fine], dtype=np.float64), VAR_FLOOR)
    position = float(np.mean(np.linalg.norm(jp - gt, axis=1) / var))
    diffs = [np.linalg.norm(np.asarray(m, dtype=np.float64) * (np.asarray(a, dtype=np.float64) - b))
             for a, b, m in zip(template_windows, warped_windows, masks)]
    return position + float(np.mean(diffs))


def total_loss(l_coarse: float, l_fine: float, weight: float = LOSS_WEIGHT) -> float:
    return weight * l_coarse + l_fine


def gt_fine_positions(template_points, h_gt: Homography, h_c: Homography) -> np.ndarray:
    """Where template points should land in the coarsely aligned frame: h_c^-1 h_gt p."""
    return apply_homography(invert(h_c) @ h_gt, template_points)
