"""Patch grids over edge maps and farthest point sampling of template patches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .edges import EdgeImage
from .errors import BadStride, EmptyInput

STRIDES = (2, 8)


@dataclass
class PatchGrid:
    """Cells of a stride-``stride`` grid in row-major order (gy, gx)."""

    stride: int
    grid_w: int
    grid_h: int
    contains_edge: np.ndarray  # (grid_h * grid_w,) bool

    def __len__(self) -> int:
        return self.grid_w * self.grid_h

    @property
    def gx(self) -> np.ndarray:
        return np.arange(len(self)) % self.grid_w

    @property
    def gy(self) -> np.ndarray:
        return np.arange(len(self)) // self.grid_w

    @property
    def grid_xy(self) -> np.ndarray:
        return np.column_stack([self.gx, self.gy])

    @property
    def centers(self) -> np.ndarray:
        return cell_centers(self.grid_xy, self.stride)

    def index(self, gx, gy):
        return np.asarray(gy) * self.grid_w + np.asarray(gx)


def cell_centers(grid_xy, stride: int) -> np.ndarray:
    return np.asarray(grid_xy, dtype=np.float64) * stride + stride / 2.0


def build_patch_grid(e: EdgeImage, stride: int) -> PatchGrid:
    if stride not in STRIDES:
        raise BadStride(f"stride must be one of {STRIDES}, got {stride}")
    if stride > min(e.width, e.height):
        raise BadStride("stride exceeds image size")
    gw = -(-e.width // stride)
    gh = -(-e.height // stride)
    padded = np.zeros((gh * stride, gw * stride), dtype=bool)
    padded[: e.height, : e.width] = e.binary
    flags = padded.reshape(gh, stride, gw, stride).any(axis=(1, 3))
    return PatchGrid(stride, gw, gh, flags.ravel())


def centroid_seed(points) -> int:
    """Index of the point nearest the centroid (lowest index on ties)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        raise EmptyInput("no points")
    d = np.linalg.norm(pts - pts.mean(axis=0), axis=1)
    return int(np.argmin(d))


def fps(points, n: int, seed_index: int = 0) -> list[int]:
    """Greedy max-min (farthest point) sampling starting at ``seed_index``."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        raise EmptyInput("no points to sample")
    if n < 1:
        raise ValueError("n must be >= 1")
    if n >= len(pts):
        return list(range(len(pts)))
    chosen = [int(seed_index)]
    mind = np.linalg.norm(pts - pts[seed_index], axis=1)
    mind[seed_index] = -1.0
    for _ in range(n - 1):
        nxt = int(np.argmax(mind))  # first maximum -> lowest index
        chosen.append(nxt)
        mind = np.minimum(mind, np.linalg.norm(pts - pts[nxt], axis=1))
        mind[chosen] = -1.0
    return chosen
