"""Synthetic part masks and homography-warped contour renderings."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from skimage import draw, measure

from .edges import MaskImage, load_mask, mask_to_edges, save_mask, write_pgm
from .errors import EmptyMask, IoFailure, NoMasks
from .geometry import Homography, PerturbationConfig, sample_gt_homography
from .refine import warp_array

def _polygon_mask(shape, xs, ys) -> np.ndarray:
    m = np.zeros(shape, dtype=bool)
    rr, cc = draw.polygon(np.asarray(ys) - 0.5, np.asarray(xs) - 0.5, shape)
    m[rr, cc] = True
    return m


def _disk(mask, cx, cy, r, value):
    rr, cc = draw.disk((cy - 0.5, cx - 0.5), r, shape=mask.shape)
    mask[rr, cc] = value


def _rotate(xs, ys, cx, cy, angle):
    c, s = np.cos(angle), np.sin(angle)
    dx, dy = np.asarray(xs) - cx, np.asarray(ys) - cy
    return cx + c * dx - s * dy, cy + s * dx + c * dy


def _gear_outline(rng, cx, cy, base):
    teeth = int(rng.integers(6, 11))
    depth = base * rng.uniform(0.08, 0.14)
    t = np.linspace(0, 2 * np.pi, teeth * 40, endpoint=False)
    phase = (t * teeth / (2 * np.pi)) % 1.0
    # trapezoidal tooth profile
    profile = np.clip(np.minimum(phase, 1.0 - phase) * 6.0 - 0.6, 0.0, 1.0)
    r = base + depth * profile
    return cx + r * np.cos(t), cy + r * np.sin(t)


def _plate_outline(rng, cx, cy, base):
    n = int(rng.integers(5, 9))
    ang = np.sort(rng.uniform(0, 2 * np.pi, n))
    ang += np.linspace(0, 2 * np.pi, n, endpoint=False) - ang  # spread evenly ...
    ang += rng.uniform(-0.25, 0.25, n) * (2 * np.pi / n)  # ... with jitter
    r = base * rng.uniform(0.85, 1.15, n)
    return cx + r * np.cos(ang), cy + r * np.sin(ang)


def _bracket_mask(rng, shape, cx, cy, base):
    """Union of two or three rectangles (L / T shapes)."""
    h, w = shape
    m = np.zeros(shape, dtype=bool)
    arm = base * rng.uniform(0.35, 0.5)
    long = base * rng.uniform(1.2, 1.5)
    rects = [(-long, -long * 0.2 - arm / 2, long, -long * 0.2 + arm / 2),
             (-arm / 2 + rng.uniform(-0.5, 0.5) * long, -long * 0.9, arm / 2 + rng.uniform(-0.5, 0.5) * long, long * 0.6)]
    if rng.uniform() < 0.5:
        rects.append((long * 0.4, -long * 0.8, long, -long * 0.2))
    angle = rng.uniform(0, 2 * np.pi)
    for x0, y0, x1, y1 in rects:
        xs = np.array([x0, x1, x1, x0]) + cx
        ys = np.array([y0, y0, y1, y1]) + cy
        xs, ys = _rotate(xs, ys, cx, cy, angle)
        m |= _polygon_mask((h, w), xs, ys)
    return m


def random_part_mask(seed: int, height: int = 480, width: int = 640) -> MaskImage:
    """A machined-part silhouette: gear, plate or bracket, with bores, bolt holes and slots."""
    rng = np.random.default_rng(seed)
    cx, cy = width / 2.0, height / 2.0
    base = rng.uniform(0.24, 0.32) * min(width, height)
    kind = int(rng.integers(0, 3))
    if kind == 2:
        mask = _bracket_mask(rng, (height, width), cx, cy, base)
    else:
        xs, ys = (_gear_outline if kind == 0 else _plate_outline)(rng, cx, cy, base)
        xs, ys = _rotate(xs, ys, cx, cy, rng.uniform(0, 2 * np.pi))
        mask = _polygon_mask((height, width), xs, ys)
    ys_f, xs_f = np.nonzero(mask)
    # rectangular slots cut into the rim
    for _ in range(int(rng.integers(1, 3))):
        k = rng.integers(len(xs_f))
        px, py = xs_f[k] + 0.5, ys_f[k] + 0.5
        half_w, half_l = base * rng.uniform(0.05, 0.09), base * rng.uniform(0.15, 0.3)
        a = rng.uniform(0, 2 * np.pi)
        sx = np.array([-half_l, half_l, half_l, -half_l])
        sy = np.array([-half_w, -half_w, half_w, half_w])
        rx, ry = _rotate(sx + px, sy + py, px, py, a)
        mask &= ~_polygon_mask((height, width), rx, ry)
    # bolt holes and a bore, kept inside the material
    dist = ndimage.distance_transform_edt(mask)
    for _ in range(int(rng.integers(2, 6))):
        r = base * rng.uniform(0.06, 0.16)
        ok = np.argwhere(dist > r + 6)
        if len(ok) == 0:
            break
        y, x = ok[rng.integers(len(ok))]
        _disk(mask, x + 0.5, y + 0.5, r, False)
        dist = ndimage.distance_transform_edt(mask)
    labels, n = ndimage.label(mask)
    if n > 1:  # keep the largest piece
        sizes = ndimage.sum(mask, labels, range(1, n + 1))
        mask = labels == (1 + int(np.argmax(sizes)))
    return MaskImage(mask)


def make_masks(out_dir, n: int, seed: int = 0, height: int = 480, width: int = 640) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for k in range(n):
        p = out / f"mask_{k:03d}.pgm"
        save_mask(p, random_part_mask(seed * 1000 + k, height, width))
        paths.append(p)
    return paths


def center_mask(mask: MaskImage) -> MaskImage:
    """Shift the foreground (integer pixels) so its centroid sits at the frame center."""
    if not mask.data.any():
        raise EmptyMask("mask has no foreground pixel")
    ys, xs = np.nonzero(mask.data)
    h, w = mask.data.shape
    dx = int(round(w / 2.0 - (xs.mean() + 0.5)))
    dy = int(round(h / 2.0 - (ys.mean() + 0.5)))
    out = np.zeros_like(mask.data)
    ys2, xs2 = ys + dy, xs + dx
    ok = (ys2 >= 0) & (ys2 < h) & (xs2 >= 0) & (xs2 < w)
    out[ys2[ok], xs2[ok]] = True
    return MaskImage(out)


def warp_mask(mask: MaskImage, h: Homography, out_shape=None) -> MaskImage:
    """Warped silhouette: pixels whose bilinear coverage is at least one half."""
    shape = mask.data.shape if out_shape is None else out_shape
    return MaskImage(warp_array(mask.data.astype(np.float64), h, shape) >= 0.5)


def render_contour(mask: MaskImage, h: Homography, noise_edges: float = 0.0, blur_sigma: float = 0.0,
                   rng=None, out_shape=None) -> np.ndarray:
    """Edge-map rendering of the warped silhouette contour, values in [0, 1].

    ``noise_edges`` is the fraction of background pixels switched on as clutter;
    blur spreads the contour and is re-normalized to a peak of 1.
    """
    img = mask_to_edges(warp_mask(mask, h, out_shape)).binary.astype(np.float64)
    if noise_edges > 0:
        rng = np.random.default_rng(0) if rng is None else rng
        img = np.maximum(img, rng.random(img.shape) < noise_edges)
    if blur_sigma > 0:
        img = ndimage.gaussian_filter(img, blur_sigma, mode="constant")
        if img.max() > 0:
            img /= img.max()
    return img


def contour_polygon(mask: MaskImage) -> np.ndarray:
    """Longest iso-0.5 contour of the mask as (N, 2) points in continuous coords."""
    padded = np.pad(mask.data.astype(np.float64), 1)
    contours = measure.find_contours(padded, 0.5)
    if not contours:
        raise EmptyMask("mask has no contour")
    c = max(contours, key=len)
    return np.column_stack([c[:, 1] - 1 + 0.5, c[:, 0] - 1 + 0.5])


def measurement_points(mask: MaskImage, n: int = 20) -> np.ndarray:
    """``n`` arc-length-uniform samples of the outer template contour."""
    poly = contour_polygon(mask)
    closed = np.vstack([poly, poly[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.arange(n) * cum[-1] / n
    x = np.interp(targets, cum, closed[:, 0])
    y = np.interp(targets, cum, closed[:, 1])
    return np.column_stack([x, y])


@dataclass
class SampleRecord:
    sample_id: str
    template: str
    image: str
    h: list[float]  # row-major canonical ground truth
    seed: int

    @property
    def homography(self) -> Homography:
        return Homography(np.asarray(self.h).reshape(3, 3))


def list_masks(masks_dir) -> list[Path]:
    d = Path(masks_dir)
    paths = sorted(p for p in d.glob("*.pgm") if p.is_file()) if d.is_dir() else []
    if not paths:
        raise NoMasks(f"no .pgm masks in {masks_dir}")
    return paths


def synth_dataset(masks_dir, out_dir, n_samples: int, cfg, seed: int) -> list[SampleRecord]:
    """Render ``n_samples`` (template, source) pairs and write ``manifest.json``.

    Sample ``k`` uses mask ``k mod #masks`` (sorted by name) and a seed derived
    from ``(seed, k)``, so datasets are reproducible and prefix-stable in ``n``.
    """
    masks = list_masks(masks_dir)
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out}: {exc}") from exc
    pcfg = cfg.perturbation()
    records = []
    for k in range(n_samples):
        sample_seed = int(np.random.SeedSequence([seed, k]).generate_state(1)[0])
        mask = center_mask(load_mask(masks[k % len(masks)]))
        if mask.data.shape != (cfg.height, cfg.width):
            raise ValueError(f"mask {masks[k % len(masks)]} is not {cfg.height}x{cfg.width}")
        h = sample_gt_homography(sample_seed, pcfg)
        img = render_contour(mask, h, cfg.noise_edges, cfg.blur_sigma, np.random.default_rng(sample_seed))
        sid = f"{k:05d}"
        save_mask(out / f"template_{sid}.pgm", mask)
        write_pgm(out / f"source_{sid}.pgm", img)
        records.append(SampleRecord(sid, f"template_{sid}.pgm", f"source_{sid}.pgm",
                                    h.m.ravel().tolist(), sample_seed))
    manifest = {"seed": seed, "samples": [asdict(r) for r in records]}
    try:
        (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write manifest: {exc}") from exc
    return records


def load_manifest(path) -> tuple[Path, list[SampleRecord]]:
    p = Path(path)
    try:
        data = json.loads(p.read_text())
        return p.parent, [SampleRecord(**r) for r in data["samples"]]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise IoFailure(f"cannot read manifest {p}: {exc}") from exc
