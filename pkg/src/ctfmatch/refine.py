"""Coarse alignment by warping, global-local fusion and sub-pixel correlation matching."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .attention import run_transformer
from .edges import EdgeImage
from .errors import BorderSkip, DimMismatch
from .features import TokenSet
from .geometry import Homography, WeightedMatchSet, apply_homography, dlt_weighted, invert


@dataclass
class WarpedImage:
    image: EdgeImage
    h: Homography


def bilinear_sample(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample ``img`` at continuous coords (pixel centers at +0.5); zero outside."""
    fx = x - 0.5
    fy = y - 0.5
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    ax = fx - x0
    ay = fy - y0
    h, w = img.shape
    padded = np.pad(img, 1)
    out = np.zeros(np.shape(x), dtype=np.float64)
    for dy, wy in ((0, 1 - ay), (1, ay)):
        for dx, wx in ((0, 1 - ax), (1, ax)):
            xx = x0 + dx
            yy = y0 + dy
            ok = (xx >= -1) & (xx <= w) & (yy >= -1) & (yy <= h)
            vals = padded[np.clip(yy + 1, 0, h + 1), np.clip(xx + 1, 0, w + 1)]
            out += np.where(ok, vals, 0.0) * wx * wy
    return out


def _source_coords(h: Homography, out_shape):
    """Continuous source coordinates h^-1 p of every output pixel center, plus a validity mask."""
    m = invert(h).m
    rows, cols = out_shape
    ys, xs = np.mgrid[0:rows, 0:cols]
    px = xs.ravel() + 0.5
    py = ys.ravel() + 0.5
    z = m[2, 0] * px + m[2, 1] * py + m[2, 2]
    safe = np.abs(z) > 1e-12
    z = np.where(safe, z, 1.0)
    sx = (m[0, 0] * px + m[0, 1] * py + m[0, 2]) / z
    sy = (m[1, 0] * px + m[1, 1] * py + m[1, 2]) / z
    return sx, sy, safe


def warp_array(arr: np.ndarray, h: Homography, out_shape) -> np.ndarray:
    """out(p) = arr(h^-1 p) by inverse mapping with bilinear interpolation."""
    sx, sy, safe = _source_coords(h, out_shape)
    return np.where(safe, bilinear_sample(arr, sx, sy), 0.0).reshape(out_shape)


def warp_image(img: EdgeImage, h: Homography, out_shape=None) -> WarpedImage:
    """Warp an edge map by ``h``; out-of-bounds samples are 0."""
    shape = img.data.shape if out_shape is None else tuple(out_shape)
    sx, sy, safe = _source_coords(h, shape)
    data = np.where(safe, bilinear_sample(img.strength, sx, sy), 0.0).reshape(shape)
    cover = np.where(safe, bilinear_sample(img.binary.astype(np.float64), sx, sy), 0.0).reshape(shape)
    return WarpedImage(EdgeImage(np.clip(data, 0.0, 1.0), cover >= 0.5), h)


@dataclass
class FusionWeights:
    """2-layer map from [coarse | fine] features to fine-dimension features."""

    w1: np.ndarray  # (hidden, C + D)
    b1: np.ndarray
    w2: np.ndarray  # (D, hidden)
    b2: np.ndarray
    activation: str = "relu"  # "relu" | "linear"

    @property
    def in_dims(self) -> int:
        return self.w1.shape[1]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[0]

    def uses_coarse(self, coarse_dim: int) -> bool:
        """False when the first-layer columns reading the coarse half are all zero."""
        return bool(np.any(self.w1[:, :coarse_dim] != 0))

    @classmethod
    def passthrough(cls, coarse_dim: int, fine_dim: int) -> "FusionWeights":
        """Zero weight on the coarse half, identity on the fine half (relu(x) - relu(-x) = x)."""
        eye = np.eye(fine_dim)
        w1 = np.zeros((2 * fine_dim, coarse_dim + fine_dim))
        w1[:fine_dim, coarse_dim:] = eye
        w1[fine_dim:, coarse_dim:] = -eye
        w2 = np.hstack([eye, -eye])
        return cls(w1, np.zeros(2 * fine_dim), w2, np.zeros(fine_dim))

    @classmethod
    def seeded(cls, coarse_dim: int, fine_dim: int, seed: int, activation: str = "relu") -> "FusionWeights":
        rng = np.random.default_rng(seed)
        din = coarse_dim + fine_dim
        hidden = 2 * fine_dim
        return cls(rng.normal(0, 1 / np.sqrt(din), (hidden, din)), np.zeros(hidden),
                   rng.normal(0, 1 / np.sqrt(hidden), (fine_dim, hidden)), np.zeros(fine_dim),
                   activation)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        hidden = x @ self.w1.T + self.b1
        if self.activation == "relu":
            hidden = np.maximum(hidden, 0.0)
        return hidden @ self.w2.T + self.b2

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {"fusion.w1": self.w1, "fusion.b1": self.b1, "fusion.w2": self.w2, "fusion.b2": self.b2,
                "fusion.relu": np.array([1.0 if self.activation == "relu" else 0.0])}

    @classmethod
    def from_arrays(cls, arrays) -> "FusionWeights":
        act = "relu" if arrays.get("fusion.relu", np.array([1.0]))[0] else "linear"
        return cls(arrays["fusion.w1"], arrays["fusion.b1"], arrays["fusion.w2"], arrays["fusion.b2"], act)


def fuse_features(coarse_feats: np.ndarray, coarse_cells, fine_grid: np.ndarray,
                  weights: FusionWeights, ratio: int = 4, normalize: bool = True) -> np.ndarray:
    """Fuse coarse features into the fine cells they cover.

    ``coarse_cells`` (K, 2) are coarse grid coordinates, each covering a
    ``ratio x ratio`` block of the fine grid ``(Hf, Wf, D)``. Cells outside those
    blocks keep their fine descriptor.
    """
    coarse_feats = np.atleast_2d(np.asarray(coarse_feats, dtype=np.float64))
    cells = np.asarray(coarse_cells, dtype=np.int64).reshape(-1, 2)
    if len(coarse_feats) != len(cells):
        raise DimMismatch("coarse features and cells differ in count")
    d = fine_grid.shape[2]
    if weights.in_dims != coarse_feats.shape[1] + d or weights.out_dim != d:
        raise DimMismatch("fusion weights do not match feature dims")
    out = fine_grid.copy()
    hf, wf = fine_grid.shape[:2]
    oy, ox = np.mgrid[0:ratio, 0:ratio]
    fy = (cells[:, 1:2] * ratio + oy.ravel()).ravel()
    fx = (cells[:, 0:1] * ratio + ox.ravel()).ravel()
    owner = np.repeat(np.arange(len(cells)), ratio * ratio)
    ok = (fy < hf) & (fx < wf)
    fy, fx, owner = fy[ok], fx[ok], owner[ok]
    x = np.hstack([coarse_feats[owner], fine_grid[fy, fx]])
    fused = weights(x)
    if normalize:
        n = np.linalg.norm(fused, axis=1, keepdims=True)
        fused = np.divide(fused, n, out=np.zeros_like(fused), where=n > 0)
    out[fy, fx] = fused
    return out


@dataclass
class FineMatch:
    i: np.ndarray  # template point (pixels)
    j_prime: np.ndarray  # matched point in the warped frame (pixels)
    offset: np.ndarray  # expectation offset in fine cells
    variance: float  # total heatmap variance in fine cells^2


def window_offsets(w: int) -> np.ndarray:
    """(n*n, 2) integer (dx, dy) offsets of a window covering [-w//2, w//2]^2."""
    r = np.arange(-(w // 2), w // 2 + 1)
    dy, dx = np.meshgrid(r, r, indexing="ij")
    return np.column_stack([dx.ravel(), dy.ravel()])


def heatmap_moments(prob: np.ndarray, offsets: np.ndarray) -> tuple[np.ndarray, float]:
    """Expectation and total variance of a probability map over cell offsets."""
    p = np.asarray(prob, dtype=np.float64).ravel()
    o = np.asarray(offsets, dtype=np.float64).reshape(-1, 2)
    mean = p @ o
    var = float(p @ ((o - mean) ** 2).sum(axis=1))
    return mean, max(var, 0.0)


def softmax2d(corr: np.ndarray) -> np.ndarray:
    z = corr - corr.max(axis=-1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=-1, keepdims=True)


def subpixel_match(f_t: np.ndarray, f_iw: np.ndarray, i_cell, w: int = 8,
                   temperature: float = 0.1, stride: int = 2) -> FineMatch:
    """Correlate the template vector at ``i_cell`` with the warped-image window around it."""
    gx, gy = (int(v) for v in i_cell)
    hf, wf = f_iw.shape[:2]
    r = w // 2
    if gx - r < 0 or gy - r < 0 or gx + r >= wf or gy + r >= hf:
        raise BorderSkip(f"window at cell ({gx}, {gy}) leaves the grid")
    offs = window_offsets(w)
    win = f_iw[gy + offs[:, 1], gx + offs[:, 0]]
    prob = softmax2d(win @ f_t[gy, gx] / temperature)
    mean, var = heatmap_moments(prob, offs)
    center = (np.array([gx, gy], dtype=np.float64) + 0.5) * stride
    return FineMatch(center, center + stride * mean, mean, var)


def border_ok(cells, grid_shape, w: int) -> np.ndarray:
    """True for cells whose full correlation window fits inside a (Hf, Wf) grid."""
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
    hf, wf = grid_shape[:2]
    r = w // 2
    return (cells[:, 0] >= r) & (cells[:, 1] >= r) & (cells[:, 0] + r < wf) & (cells[:, 1] + r < hf)


def gather_windows(grid: np.ndarray, cells, w: int) -> np.ndarray:
    """(M, n, D) descriptors of the window around each cell, in ``window_offsets`` order."""
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
    offs = window_offsets(w)
    return grid[cells[:, 1:2] + offs[None, :, 1], cells[:, 0:1] + offs[None, :, 0]]


def correlate_windows(queries: np.ndarray, windows: np.ndarray, cells, w: int,
                      temperature: float = 0.1, stride: int = 2) -> list[FineMatch]:
    """Softmax-expectation matches from query vectors (M, D) and their windows (M, n, D)."""
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
    if len(cells) == 0:
        return []
    offs = window_offsets(w)
    prob = softmax2d(np.einsum("mnd,md->mn", windows, queries) / temperature)
    mean = prob @ offs
    var = np.einsum("mn,mn->m", prob, ((offs[None, :, :] - mean[:, None, :]) ** 2).sum(axis=2))
    centers = (cells + 0.5) * stride
    return [FineMatch(c, c + stride * m, m, float(max(v, 0.0)))
            for c, m, v in zip(centers, mean, var)]


def subpixel_match_batch(f_t: np.ndarray, f_iw: np.ndarray, cells, w: int = 8,
                         temperature: float = 0.1, stride: int = 2) -> list[FineMatch]:
    """Vectorized ``subpixel_match`` over many cells; border windows are skipped."""
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
    cells = cells[border_ok(cells, f_iw.shape, w)]
    if len(cells) == 0:
        return []
    wins = gather_windows(f_iw, cells, w)
    q = f_t[cells[:, 1], cells[:, 0]]
    return correlate_windows(q, wins, cells, w, temperature, stride)


def local_attention_windows(f_t: np.ndarray, f_iw: np.ndarray, cells, w: int,
                            weights) -> tuple[np.ndarray, np.ndarray]:
    """Run the attention stack on each (template window, warped window) pair.

    Returns the transformed template center vectors (M, D) and warped windows (M, n, D).
    Token positions are the window offsets, so only relative layout matters.
    """
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
    offs = window_offsets(w).astype(np.float64)
    center = len(offs) // 2
    t_wins = gather_windows(f_t, cells, w)
    i_wins = gather_windows(f_iw, cells, w)
    q = np.empty((len(cells), f_t.shape[2]))
    out = np.empty_like(i_wins)
    for k in range(len(cells)):
        tt, ti = run_transformer(TokenSet(t_wins[k], offs), TokenSet(i_wins[k], offs, "image"), weights)
        q[k] = tt.descriptors[center]
        out[k] = ti.descriptors
    return q, out


def finalize_matches(fine: list[FineMatch], h_c: Homography) -> WeightedMatchSet:
    """Map warped-frame positions back through h_c^-1; every match gets weight 1."""
    back = invert(h_c)
    if not fine:
        return WeightedMatchSet.uniform(np.zeros((0, 2)), np.zeros((0, 2)))
    t = np.array([f.i for f in fine])
    j = apply_homography(back, np.array([f.j_prime for f in fine]))
    return WeightedMatchSet.uniform(t, j)


def estimate_final_homography(ms: WeightedMatchSet) -> Homography:
    return dlt_weighted(ms)


def fine_edge_cells(template_edges: EdgeImage, coarse_cells, stride: int = 2,
                    coarse_stride: int = 8, restrict: Optional[bool] = True) -> np.ndarray:
    """Fine cells holding a template edge pixel inside the given coarse cells, sorted (gy, gx)."""
    b = template_edges.binary
    h, w = b.shape
    hf, wf = -(-h // stride), -(-w // stride)
    padded = np.zeros((hf * stride, wf * stride), dtype=bool)
    padded[:h, :w] = b
    has_edge = padded.reshape(hf, stride, wf, stride).any(axis=(1, 3))
    if restrict:
        ratio = coarse_stride // stride
        allowed = np.zeros_like(has_edge)
        for cx, cy in np.asarray(coarse_cells, dtype=np.int64).reshape(-1, 2):
            allowed[cy * ratio:(cy + 1) * ratio, cx * ratio:(cx + 1) * ratio] = True
        has_edge &= allowed
    gy, gx = np.nonzero(has_edge)
    return np.column_stack([gx, gy])
