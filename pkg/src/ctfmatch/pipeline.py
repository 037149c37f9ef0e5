"""End-to-end matching of a template mask against a source image, plus batch evaluation."""

from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from skimage import draw

from .attention import AttentionBlockWeights, run_transformer
from .coarse import mnn_filter, score_matrix, sinkhorn, dual_softmax
from .config import PipelineConfig
from .consistency import build_compat_matrix, combine_weights, leading_eigenvector
from .edges import EdgeImage, GrayImage, MaskImage, detect_edges, load_gray, load_mask, mask_to_edges, write_pgm
from .errors import EmptyMask, IoFailure, MatchError, PipelineDegenerate
from .features import OrientationField, TokenSet
from .geometry import Homography, WeightedMatchSet, auc, dlt_weighted, invert, reprojection_errors
from .refine import (
    FineMatch,
    FusionWeights,
    border_ok,
    correlate_windows,
    finalize_matches,
    fine_edge_cells,
    fuse_features,
    gather_windows,
    local_attention_windows,
    warp_image,
)
from .sampling import build_patch_grid, centroid_seed, fps
from .synth import SampleRecord, contour_polygon, load_manifest, measurement_points
from .weightfile import load_arrays, save_arrays

COARSE_STRIDE = 8
FINE_STRIDE = 2
THRESHOLDS = (3, 5, 10)
MIN_MATCHES = 4


@dataclass
class CoarseMatches:
    t_cells: np.ndarray  # (K, 2) template grid coordinates
    i_cells: np.ndarray  # (K, 2) image grid coordinates
    scores: np.ndarray
    e: np.ndarray
    w: np.ndarray

    def __len__(self) -> int:
        return len(self.t_cells)

    @property
    def t_pts(self) -> np.ndarray:
        return (self.t_cells + 0.5) * COARSE_STRIDE

    @property
    def i_pts(self) -> np.ndarray:
        return (self.i_cells + 0.5) * COARSE_STRIDE

    def dump(self) -> str:
        rows = np.column_stack([self.t_cells, self.i_cells, self.scores])
        return "".join(f"{int(a)} {int(b)} {int(c)} {int(d)} {s!r}\n" for a, b, c, d, s in rows.tolist())


@dataclass
class PipelineResult:
    h: Homography
    h_coarse: Homography
    coarse: CoarseMatches
    fine: list[FineMatch]
    fine_set: WeightedMatchSet  # template pixels -> source pixels
    timings: dict[str, float] = field(default_factory=dict)  # milliseconds per stage

    def fine_dump(self) -> str:
        var = [f.variance for f in self.fine]
        rows = np.column_stack([self.fine_set.template_pts, self.fine_set.image_pts, var]) if self.fine else []
        return "".join(" ".join(repr(float(v)) for v in r) + "\n" for r in np.asarray(rows).tolist())


def save_attention_weights(path, coarse: AttentionBlockWeights, fine: Optional[AttentionBlockWeights] = None):
    arrays = {f"coarse.{k}": v for k, v in coarse.to_arrays().items()}
    if fine is not None:
        arrays.update({f"fine.{k}": v for k, v in fine.to_arrays().items()})
    save_arrays(path, arrays)


def _split(arrays: dict, prefix: str) -> dict:
    return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}


class Matcher:
    """Holds a configuration and its (loaded or seeded) weights; ``match`` is pure given those."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.coarse_desc = cfg.coarse_descriptor()
        self.fine_desc = cfg.fine_descriptor()
        self.coarse_attn = self.fine_attn = None
        if cfg.attention:
            arrays = load_arrays(cfg.attention_weights) if cfg.attention_weights else {}
            coarse, fine = _split(arrays, "coarse."), _split(arrays, "fine.")
            self.coarse_attn = (AttentionBlockWeights.from_arrays(coarse) if coarse else
                                AttentionBlockWeights.seeded(cfg.coarse_dim, cfg.coarse_layers, cfg.seed))
            self.fine_attn = (AttentionBlockWeights.from_arrays(fine) if fine else
                              AttentionBlockWeights.seeded(cfg.fine_dim, cfg.fine_layers, cfg.seed + 1))
        if cfg.fusion_weights:
            self.fusion = FusionWeights.from_arrays(load_arrays(cfg.fusion_weights))
        else:
            self.fusion = FusionWeights.passthrough(cfg.coarse_dim, cfg.fine_dim)

    def translate_source(self, source) -> EdgeImage:
        """Bring the source into the edge-map modality shared with the template."""
        data = source.data if isinstance(source, GrayImage) else np.asarray(source, dtype=np.float64)
        if self.cfg.source_mode == "gray":
            return detect_edges(GrayImage(data), self.cfg.edges())
        return EdgeImage(data, data >= 0.5)

    def _transform(self, weights, t: TokenSet, i: TokenSet) -> tuple[TokenSet, TokenSet]:
        if weights is None or weights.n_layers == 0:
            return t, i
        return run_transformer(t, i, weights)

    def match(self, template: MaskImage, source) -> PipelineResult:
        cfg = self.cfg
        clock = _Clock()
        try:
            te = mask_to_edges(template)
        except EmptyMask as exc:
            raise PipelineDegenerate(str(exc)) from exc
        ie = self.translate_source(source)
        if ie.data.shape != te.data.shape:
            raise PipelineDegenerate(f"template {te.data.shape} and source {ie.data.shape} differ in size")
        clock.lap("edges")

        # coarse tokens: sampled template patches, every source patch
        tg = build_patch_grid(te, COARSE_STRIDE)
        ig = build_patch_grid(ie, COARSE_STRIDE)
        edge_idx = np.flatnonzero(tg.contains_edge)
        pts = tg.centers[edge_idx]
        sel = edge_idx[fps(pts, cfg.n_patches, centroid_seed(pts))]
        t_field = OrientationField(te, self.coarse_desc)
        i_field = OrientationField(ie, self.coarse_desc)
        t_raw = TokenSet(t_field.describe(tg.centers[sel]), tg.grid_xy[sel], "template")
        t_tok = t_raw
        i_tok = TokenSet(i_field.describe(ig.centers), ig.grid_xy, "image")
        clock.lap("coarse_features")
        t_tok, i_tok = self._transform(self.coarse_attn, t_tok, i_tok)
        clock.lap("coarse_attention")

        sm = score_matrix(t_tok, i_tok, cfg.temperature)
        assign = sinkhorn(sm, cfg.sinkhorn_iters, cfg.bin_score) if cfg.matching == "OT" else dual_softmax(sm)
        mm = mnn_filter(assign, cfg.theta_c)
        if len(mm) < MIN_MATCHES:
            raise PipelineDegenerate(f"only {len(mm)} coarse matches")
        t_cells = tg.grid_xy[sel][mm.t_idx]
        i_cells = ig.grid_xy[mm.i_idx]
        t_pts = tg.centers[sel][mm.t_idx]
        i_pts = ig.centers[mm.i_idx]
        clock.lap("coarse_matching")

        if cfg.coarse_weighting == "consistency":
            e = leading_eigenvector(build_compat_matrix(t_pts, i_pts, cfg.consistency())).e
            s = mm.scores
        elif cfg.coarse_weighting == "score":
            e, s = np.ones(len(mm)), mm.scores
        else:
            e, s = np.ones(len(mm)), np.ones(len(mm))
        ms = combine_weights(t_pts, i_pts, s, e)
        try:
            h_c = dlt_weighted(ms)
        except MatchError as exc:
            raise PipelineDegenerate(f"coarse homography: {exc}") from exc
        coarse = CoarseMatches(t_cells, i_cells, mm.scores, e, ms.w)
        clock.lap("coarse_homography")

        # fine level in the coarsely aligned frame: I_w(p) = I(H_c p)
        to_template = invert(h_c)
        warped = warp_image(ie, to_template).image
        hf, wf = -(-te.height // FINE_STRIDE), -(-te.width // FINE_STRIDE)
        gy, gx = np.mgrid[0:hf, 0:wf]
        centers = np.column_stack([gx.ravel(), gy.ravel()]) * FINE_STRIDE + FINE_STRIDE // 2
        f_t = OrientationField(te, self.fine_desc).describe(centers).reshape(hf, wf, -1)
        f_w = OrientationField(warped, self.fine_desc).describe(centers).reshape(hf, wf, -1)
        clock.lap("fine_features")

        # global context: coarse features of the same sampled patches on both sides
        cells_c = tg.grid_xy[sel]
        if self.fusion.uses_coarse(cfg.coarse_dim):
            w_field = OrientationField(warped, self.coarse_desc)
            w_tok = TokenSet(w_field.describe(tg.centers[sel]), cells_c, "image")
            t_ctx, w_ctx = (tok.descriptors for tok in self._transform(self.coarse_attn, t_raw, w_tok))
        else:
            # the map ignores its coarse input, so any placeholder gives the same output
            t_ctx = w_ctx = np.zeros((len(cells_c), cfg.coarse_dim))
        ratio = COARSE_STRIDE // FINE_STRIDE
        f_t = fuse_features(t_ctx, cells_c, f_t, self.fusion, ratio)
        f_w = fuse_features(w_ctx, cells_c, f_w, self.fusion, ratio)
        clock.lap("fusion")

        cells = fine_edge_cells(te, cells_c, FINE_STRIDE, COARSE_STRIDE)
        cells = cells[border_ok(cells, f_w.shape, cfg.fine_window)]
        if self.fine_attn is not None and self.fine_attn.n_layers:
            q, wins = local_attention_windows(f_t, f_w, cells, cfg.fine_window, self.fine_attn)
        else:
            q = f_t[cells[:, 1], cells[:, 0]]
            wins = gather_windows(f_w, cells, cfg.fine_window)
        fine = correlate_windows(q, wins, cells, cfg.fine_window, cfg.fine_temperature, FINE_STRIDE)
        if len(fine) < MIN_MATCHES:
            raise PipelineDegenerate(f"only {len(fine)} fine matches")
        clock.lap("fine_matching")

        fine_set = finalize_matches(fine, to_template)
        try:
            h = dlt_weighted(fine_set)
        except MatchError as exc:
            raise PipelineDegenerate(f"final homography: {exc}") from exc
        clock.lap("final_homography")
        return PipelineResult(h, h_c, coarse, fine, fine_set, clock.laps)


class _Clock:
    def __init__(self):
        self.t = time.perf_counter()
        self.laps: dict[str, float] = {}

    def lap(self, name: str):
        now = time.perf_counter()
        self.laps[name] = 1000.0 * (now - self.t)
        self.t = now


def run_pipeline(template: MaskImage, source, cfg: PipelineConfig) -> PipelineResult:
    return Matcher(cfg).match(template, source)


def overlay_image(source: np.ndarray, template: MaskImage, h: Homography) -> np.ndarray:
    """Source dimmed to half intensity with the template contour projected by ``h`` drawn at full."""
    out = 0.5 * np.clip(np.asarray(source, dtype=np.float64), 0.0, 1.0)
    poly = h(contour_polygon(template))
    rows, cols = draw.polygon_perimeter(poly[:, 1] - 0.5, poly[:, 0] - 0.5, shape=out.shape, clip=False)
    ok = (rows >= 0) & (rows < out.shape[0]) & (cols >= 0) & (cols < out.shape[1])
    out[rows[ok], cols[ok]] = 1.0
    return out


def write_match_outputs(out_dir, result: PipelineResult, source: np.ndarray, template: MaskImage) -> None:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "homography.txt").write_text(result.h.to_text())
        (out / "homography_coarse.txt").write_text(result.h_coarse.to_text())
        (out / "coarse_matches.txt").write_text(result.coarse.dump())
        (out / "fine_matches.txt").write_text(result.fine_dump())
    except OSError as exc:
        raise IoFailure(f"cannot write outputs to {out}: {exc}") from exc
    write_pgm(out / "overlay.pgm", overlay_image(source, template, result.h))


# ---------------------------------------------------------------- evaluation


@dataclass
class SampleResult:
    sample_id: str
    mean_err: float
    max_err: float
    status: str  # "ok" or the degenerate reason
    n_coarse: int = 0
    n_fine: int = 0
    coarse_inlier_rate: float = 0.0
    fine_inlier_rate: float = 0.0
    coarse_err: float = float("inf")
    h: Optional[list[float]] = None
    runtime_ms: float = 0.0


@dataclass
class EvalReport:
    rows: list[SampleResult]

    @property
    def errors(self) -> np.ndarray:
        return np.array([r.mean_err for r in self.rows])

    @property
    def auc(self) -> dict[str, float]:
        errs = self.errors
        return {f"auc@{t}px": auc(errs, t) for t in THRESHOLDS}

    @property
    def coarse_auc(self) -> dict[str, float]:
        errs = np.array([r.coarse_err for r in self.rows])
        return {f"auc@{t}px": auc(errs, t) for t in THRESHOLDS}

    def to_dict(self) -> dict:
        """Everything except runtimes, so that equal inputs give equal reports."""
        samples = []
        for r in self.rows:
            samples.append({
                "sample_id": r.sample_id, "status": r.status,
                "mean_err": _num(r.mean_err), "max_err": _num(r.max_err), "coarse_err": _num(r.coarse_err),
                "n_coarse": r.n_coarse, "n_fine": r.n_fine,
                "coarse_inlier_rate@3px": r.coarse_inlier_rate, "fine_inlier_rate@3px": r.fine_inlier_rate,
                "h": r.h,
            })
        return {"n_samples": len(self.rows), "n_failed": sum(r.status != "ok" for r in self.rows),
                "auc": self.auc, "coarse_auc": self.coarse_auc, "samples": samples}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["sample_id", "mean_err", "max_err"])
        for r in self.rows:
            wr.writerow([r.sample_id, repr(float(r.mean_err)), repr(float(r.max_err))])
        return buf.getvalue()

    def timings_json(self) -> str:
        times = {r.sample_id: round(r.runtime_ms, 3) for r in self.rows}
        total = sum(times.values())
        return json.dumps({"per_sample_ms": times, "total_ms": round(total, 3)}, indent=1, sort_keys=True) + "\n"


def _num(x: float):
    """JSON has no infinity; failed samples carry the string "inf"."""
    return float(x) if np.isfinite(x) else "inf"


def evaluate_sample(root: Path, rec: SampleRecord, matcher: Matcher, overlay_dir: Optional[Path] = None) -> SampleResult:
    t0 = time.perf_counter()
    template = load_mask(root / rec.template)
    source = load_gray(root / rec.image).data
    h_gt = rec.homography
    mp = measurement_points(template)
    try:
        res = matcher.match(template, source)
    except PipelineDegenerate as exc:
        return SampleResult(rec.sample_id, float("inf"), float("inf"), f"degenerate: {exc}",
                            runtime_ms=1000.0 * (time.perf_counter() - t0))
    err = reprojection_errors(res.h, h_gt, mp)
    coarse_err = float(reprojection_errors(res.h_coarse, h_gt, mp).mean())
    c_res = np.linalg.norm(h_gt(res.coarse.t_pts) - res.coarse.i_pts, axis=1)
    f_res = np.linalg.norm(h_gt(res.fine_set.template_pts) - res.fine_set.image_pts, axis=1)
    if overlay_dir is not None:
        write_pgm(overlay_dir / f"overlay_{rec.sample_id}.pgm", overlay_image(source, template, res.h))
    return SampleResult(
        rec.sample_id, float(err.mean()), float(err.max()), "ok",
        n_coarse=len(res.coarse), n_fine=len(res.fine),
        coarse_inlier_rate=float(np.mean(c_res < 3.0)), fine_inlier_rate=float(np.mean(f_res < 3.0)),
        coarse_err=coarse_err, h=res.h.m.ravel().tolist(),
        runtime_ms=1000.0 * (time.perf_counter() - t0))


def _worker(args):
    root, rec, cfg_json, overlay_dir = args
    return evaluate_sample(root, rec, Matcher(PipelineConfig.model_validate_json(cfg_json)), overlay_dir)


def evaluate(manifest, cfg: PipelineConfig, out_dir=None, workers: int = 1, overlays: bool = True) -> EvalReport:
    """Run every manifest sample; failures are recorded with infinite error, never raised."""
    root, records = load_manifest(manifest)
    if not records:
        raise PipelineDegenerate("manifest has no samples")
    out = Path(out_dir) if out_dir is not None else None
    overlay_dir = out / "overlays" if (out is not None and overlays) else None
    if workers > 1:
        jobs = [(root, r, cfg.model_dump_json(), overlay_dir) for r in records]
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_worker, jobs))
    else:
        matcher = Matcher(cfg)
        rows = [evaluate_sample(root, r, matcher, overlay_dir) for r in records]
    report = EvalReport(sorted(rows, key=lambda r: r.sample_id))
    if out is not None:
        write_report(out, report)
    return report


def write_report(out_dir, report: EvalReport) -> None:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report.to_json())
        (out / "errors.csv").write_text(report.to_csv())
        (out / "timings.json").write_text(report.timings_json())
        hdir = out / "homographies"
        hdir.mkdir(exist_ok=True)
        for r in report.rows:
            if r.h is not None:
                (hdir / f"h_{r.sample_id}.txt").write_text(Homography(np.array(r.h).reshape(3, 3)).to_text())
    except OSError as exc:
        raise IoFailure(f"cannot write report to {out}: {exc}") from exc
