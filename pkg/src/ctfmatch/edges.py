"""Grayscale/mask images and their conversion to a common edge-map modality."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import EmptyMask, ImageTooSmall, IoFailure


@dataclass
class GrayImage:
    data: np.ndarray  # (height, width) floats in [0, 1]

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError("gray image must be 2-D")
        if self.data.size and (self.data.min() < 0 or self.data.max() > 1):
            raise ValueError("gray values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass
class MaskImage:
    data: np.ndarray  # (height, width) bool

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=bool)
        if self.data.ndim != 2:
            raise ValueError("mask must be 2-D")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass
class EdgeImage:
    data: np.ndarray  # edge strength in [0, 1]
    binary: np.ndarray  # thresholded edge set

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.binary = np.asarray(self.binary, dtype=bool)
        if self.data.shape != self.binary.shape:
            raise ValueError("strength and binary maps differ in shape")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def strength(self) -> np.ndarray:
        """Strength restricted to the binary edge set."""
        return np.where(self.binary, self.data, 0.0)


@dataclass(frozen=True)
class EdgeConfig:
    low: float = 0.1
    high: float = 0.2
    sigma: float = 1.0  # gaussian pre-smoothing; 0 disables

    def __post_init__(self):
        if not (0 <= self.low <= self.high <= 1):
            raise ValueError("need 0 <= low <= high <= 1")


def _nms(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Keep pixels that are >= both neighbors along the quantized gradient direction."""
    h, w = mag.shape
    p = np.pad(mag, 1)
    # angle of the gradient folded into [0, 180)
    ang = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    sector = ((ang + 22.5) // 45.0).astype(int) % 4
    # (dy, dx) steps for sectors 0: horizontal, 1: 45 deg, 2: vertical, 3: 135 deg
    steps = [(0, 1), (1, 1), (1, 0), (1, -1)]
    keep = np.zeros_like(mag, dtype=bool)
    for k, (dy, dx) in enumerate(steps):
        fwd = p[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        bwd = p[1 - dy : 1 - dy + h, 1 - dx : 1 - dx + w]
        keep |= (sector == k) & (mag >= fwd) & (mag >= bwd)
    return np.where(keep & (mag > 0), mag, 0.0)


def detect_edges(img: GrayImage, cfg: EdgeConfig = EdgeConfig()) -> EdgeImage:
    """Gradient magnitude, non-maximum suppression and hysteresis thresholding."""
    if img.height < 3 or img.width < 3:
        raise ImageTooSmall(f"need at least 3x3, got {img.height}x{img.width}")
    im = img.data
    if cfg.sigma > 0:
        im = ndimage.gaussian_filter(im, cfg.sigma, mode="nearest")
    gx = ndimage.sobel(im, axis=1, mode="nearest")
    gy = ndimage.sobel(im, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)
    mag[0, :] = mag[-1, :] = 0.0
    mag[:, 0] = mag[:, -1] = 0.0
    peak = mag.max()
    if peak <= 0:
        zeros = np.zeros_like(mag)
        return EdgeImage(zeros, zeros.astype(bool))
    mag /= peak
    thin = _nms(mag, gx, gy)

    weak = thin >= cfg.low
    strong = thin >= cfg.high
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=int))
    if n:
        keep = np.zeros(n + 1, dtype=bool)
        keep[np.unique(labels[strong])] = True
        keep[0] = False
        binary = keep[labels]
    else:
        binary = np.zeros_like(weak)
    return EdgeImage(thin, binary)


def mask_to_edges(mask: MaskImage) -> EdgeImage:
    """Inner contour: foreground pixels with at least one 4-neighbor outside (frame counts as outside)."""
    m = mask.data
    if not m.any():
        raise EmptyMask("mask has no foreground pixel")
    p = np.pad(m, 1, constant_values=False)
    interior = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    contour = m & ~interior
    return EdgeImage(contour.astype(np.float64), contour)


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit grayscale image as uint8 (height, width)."""
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "1", "P"):
                im = im.convert("L")
            return np.array(im.convert("L"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def write_pgm(path, data: np.ndarray) -> None:
    """Write uint8 or [0, 1] float data as binary PGM (P5)."""
    arr = np.asarray(data)
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(np.asarray(arr, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(arr).save(path, format="PPM")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_gray(path) -> GrayImage:
    return GrayImage(read_pgm(path) / 255.0)


def load_mask(path) -> MaskImage:
    return MaskImage(read_pgm(path) >= 128)


def save_mask(path, mask: MaskImage) -> None:
    write_pgm(path, np.where(mask.data, 255, 0).astype(np.uint8))
