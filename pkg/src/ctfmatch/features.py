"""Gradient-orientation histogram descriptors on edge maps.

Histograms use 8 orientation bins over [0, 2*pi) with linear (soft) binning,
computed over a ``subdiv x subdiv`` split of a square window. Optional context
windows (larger squares around the same center) append their own histograms;
each window's block is L2-normalized on its own, then the whole vector is
normalized and lifted to ``dim`` channels by a seeded matrix with orthonormal
columns, so dot products between descriptors equal dot products between the
normalized histograms.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from .edges import EdgeImage
from .errors import DimMismatch, WindowOutOfRange

N_BINS = 8


@dataclass(frozen=True)
class DescriptorConfig:
    window: int  # side in pixels, even
    subdiv: int  # spatial split per axis: 2 at coarse level, 1 at fine level
    dim: int
    sigma: float = 1.0  # smoothing of the edge strength before differentiation
    seed: int = 0  # seed of the lifting projection
    context: tuple[int, ...] = ()  # extra window sides, same center and subdivision

    def __post_init__(self):
        object.__setattr__(self, "context", tuple(int(c) for c in self.context))
        if self.dim % 4:
            raise DimMismatch(f"descriptor dim must be divisible by 4, got {self.dim}")
        if self.subdiv < 1:
            raise ValueError("subdiv must be >= 1")
        for win in self.windows:
            if win <= 0 or win % (2 * self.subdiv):
                raise ValueError("window must be a positive multiple of 2 * subdiv")
        if self.dim < self.hist_len:
            raise DimMismatch(f"dim {self.dim} smaller than histogram length {self.hist_len}")

    @property
    def windows(self) -> tuple[int, ...]:
        return (self.window,) + self.context

    @property
    def block_len(self) -> int:
        return N_BINS * self.subdiv * self.subdiv

    @property
    def hist_len(self) -> int:
        return self.block_len * len(self.windows)


COARSE = DescriptorConfig(window=48, subdiv=2, dim=64, context=(128,))
FINE = DescriptorConfig(window=16, subdiv=1, dim=32, sigma=2.0)


@dataclass
class TokenSet:
    descriptors: np.ndarray  # (N, dim), unit rows
    positions: np.ndarray  # (N, 2) grid coordinates (gx, gy)
    side: str = "template"

    def __post_init__(self):
        self.descriptors = np.asarray(self.descriptors, dtype=np.float64)
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)
        if len(self.descriptors) != len(self.positions):
            raise DimMismatch("descriptor and position counts differ")
        if self.side not in ("template", "image"):
            raise ValueError(f"unknown side {self.side!r}")

    def __len__(self) -> int:
        return len(self.descriptors)

    @property
    def dim(self) -> int:
        return self.descriptors.shape[1]


@lru_cache(maxsize=16)
def lift_matrix(dim: int, hist_len: int, seed: int) -> np.ndarray:
    """(dim, hist_len) matrix with orthonormal columns."""
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((dim, hist_len)))
    q = q * np.sign(np.diag(r))
    q.setflags(write=False)
    return q


class OrientationField:
    """Per-bin integral images of gradient magnitude for one edge map."""

    def __init__(self, e: EdgeImage, cfg: DescriptorConfig):
        self.cfg = cfg
        self.shape = e.data.shape
        self.pad = max(cfg.windows) // 2 + 1
        s = np.pad(e.strength, self.pad)
        if cfg.sigma > 0:
            s = ndimage.gaussian_filter(s, cfg.sigma, mode="constant")
        gy, gx = np.gradient(s)
        mag = np.hypot(gx, gy)
        pos = (np.arctan2(gy, gx) % (2 * np.pi)) / (2 * np.pi / N_BINS)
        lo = np.floor(pos).astype(np.int64) % N_BINS
        frac = pos - np.floor(pos)
        hi = (lo + 1) % N_BINS
        size = s.size
        pix = np.arange(size)
        # scatter both soft-bin shares into (bin, row, col) planes
        planes = np.bincount((lo.ravel() * size + pix), (mag * (1 - frac)).ravel(), N_BINS * size)
        planes += np.bincount((hi.ravel() * size + pix), (mag * frac).ravel(), N_BINS * size)
        planes = planes.reshape(N_BINS, *s.shape)
        integ = np.zeros((N_BINS, s.shape[0] + 1, s.shape[1] + 1))
        integ[:, 1:, 1:] = planes.cumsum(axis=1).cumsum(axis=2)
        self.integral = integ

    def _box(self, x0, y0, size):
        """Per-bin sums over [x0, x0+size) x [y0, y0+size) in unpadded pixel indices."""
        x0 = np.asarray(x0) + self.pad
        y0 = np.asarray(y0) + self.pad
        ii = self.integral
        return (ii[:, y0 + size, x0 + size] - ii[:, y0, x0 + size]
                - ii[:, y0 + size, x0] + ii[:, y0, x0]).T

    def histograms(self, centers) -> np.ndarray:
        """Raw (unnormalized) histograms for integer window centers (N, 2)."""
        c = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
        ci = np.rint(c).astype(int)
        h, w = self.shape
        if np.any(np.abs(c - ci) > 1e-9):
            raise WindowOutOfRange("window centers must be integral")
        if np.any(ci < 0) or np.any(ci[:, 0] > w) or np.any(ci[:, 1] > h):
            raise WindowOutOfRange("window center outside the image")
        parts = []
        for win in self.cfg.windows:
            half = win // 2
            sub = win // self.cfg.subdiv
            for sy in range(self.cfg.subdiv):
                for sx in range(self.cfg.subdiv):
                    parts.append(self._box(ci[:, 0] - half + sx * sub, ci[:, 1] - half + sy * sub, sub))
        return np.concatenate(parts, axis=1)

    def describe(self, centers) -> np.ndarray:
        return lift(self.histograms(centers), self.cfg)


def _unit_rows(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.divide(x, n, out=np.zeros_like(x), where=n > 1e-12)


def lift(hist: np.ndarray, cfg: DescriptorConfig) -> np.ndarray:
    hist = np.atleast_2d(np.asarray(hist, dtype=np.float64))
    if len(cfg.windows) > 1:
        blocks = hist.reshape(len(hist), len(cfg.windows), cfg.block_len)
        hist = _unit_rows(blocks).reshape(len(hist), -1)
    norm = np.linalg.norm(hist, axis=1, keepdims=True)
    blank = norm[:, 0] <= 1e-12
    unit = np.divide(hist, norm, out=np.zeros_like(hist), where=~blank[:, None])
    out = unit @ lift_matrix(cfg.dim, cfg.hist_len, cfg.seed).T
    out[blank] = 0.0
    out[blank, 0] = 1.0
    return out


def orientation_histogram(e: EdgeImage, center, cfg: DescriptorConfig) -> np.ndarray:
    return OrientationField(e, cfg).histograms([center])[0]


def describe_patch(e: EdgeImage, center, window: int, dim: int, subdiv: int = 2,
                   sigma: float = 1.0, seed: int = 0) -> np.ndarray:
    cfg = DescriptorConfig(window=window, subdiv=subdiv, dim=dim, sigma=sigma, seed=seed)
    return OrientationField(e, cfg).describe([center])[0]


def describe_cells(e: EdgeImage, centers, cfg: DescriptorConfig) -> np.ndarray:
    return OrientationField(e, cfg).describe(centers)
