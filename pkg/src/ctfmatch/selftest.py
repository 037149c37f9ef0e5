"""Fast numerical self-checks against independent reference computations."""

from __future__ import annotations

import time

import numpy as np

from .attention import RotaryEncoder, linear_attention, linear_attention_bruteforce, rope_apply
from .coarse import AssignmentMatrix, ScoreMatrix, sinkhorn
from .consistency import leading_eigenvector
from .geometry import Homography, WeightedMatchSet, dlt_weighted
from .losses import GroundTruthCoarse, coarse_loss
from .refine import heatmap_moments, window_offsets


def check_rope(rng) -> float:
    enc = RotaryEncoder(64)
    worst = 0.0
    for _ in range(100):
        m, n = rng.uniform(-50, 50, (2, 2))
        f, g = rng.standard_normal((2, 64))
        lhs = rope_apply(enc, m, f) @ rope_apply(enc, n, g)
        rhs = f @ rope_apply(enc, n - m, g)
        worst = max(worst, abs(lhs - rhs))
    return worst


def check_linear_attention(rng) -> float:
    enc = RotaryEncoder(16)
    worst = 0.0
    for _ in range(10):
        n = int(rng.integers(1, 24))
        q, k, v = rng.standard_normal((3, n, 16))
        pos = rng.integers(0, 30, (n, 2)).astype(float)
        fast = linear_attention(q, k, v, pos, pos, enc)
        slow = linear_attention_bruteforce(q, k, v, pos, pos, enc)
        worst = max(worst, float(np.abs(fast - slow).max()))
    return worst


def check_sinkhorn(rng) -> float:
    s = rng.standard_normal((32, 48)) * 3
    a = sinkhorn(ScoreMatrix(s), 100, bin_score=1.0)
    # the dustbin score is part of the augmented matrix and shifts with it
    b = sinkhorn(ScoreMatrix(s + 7.5), 100, bin_score=8.5)
    rows = a.c.sum(axis=1) + a.dustbin_row
    cols = a.c.sum(axis=0) + a.dustbin_col
    return max(float(np.abs(rows - 1).max()), float(np.abs(cols - 1).max()), float(np.abs(a.c - b.c).max()))


def check_dlt(rng) -> float:
    worst = 0.0
    for _ in range(20):
        h = Homography(np.eye(3) + rng.normal(0, [[0.1, 0.1, 20], [0.1, 0.1, 20], [1e-4, 1e-4, 0]]))
        src = rng.uniform(0, 640, (12, 2))
        worst = max(worst, dlt_weighted(WeightedMatchSet.uniform(src, h(src))).distance(h))
    return worst


def check_eigenvector(rng) -> float:
    a = rng.uniform(0, 1, (8, 8))
    e_mat = (a + a.T) / 2
    np.fill_diagonal(e_mat, 0)
    vals, vecs = np.linalg.eigh(e_mat)
    ref = np.abs(vecs[:, -1])
    got = leading_eigenvector(e_mat, iters=500, tol=1e-14).e
    return 1.0 - float(ref @ got / (np.linalg.norm(ref) * np.linalg.norm(got)))


def check_moments(rng) -> float:
    offs = window_offsets(8)
    mean, var = heatmap_moments(np.full(len(offs), 1.0 / len(offs)), offs)
    # uniform over {-4..4}^2: per-axis variance (9^2 - 1) / 12
    return max(float(np.abs(mean).max()), abs(var - 2 * (81 - 1) / 12))


def check_losses(rng) -> float:
    n = 6
    c = np.full((n, n), 1.0 / n)
    gt = GroundTruthCoarse(np.column_stack([np.arange(n), np.arange(n)]), np.zeros(0, dtype=int))
    return abs(coarse_loss(AssignmentMatrix(c, "DS"), gt) - np.log(n))


CHECKS = [
    ("rotary relative-position identity", check_rope, 1e-9),
    ("linear attention vs double sum", check_linear_attention, 1e-9),
    ("sinkhorn marginals and shift invariance", check_sinkhorn, 1e-6),
    ("weighted DLT exact recovery", check_dlt, 1e-8),
    ("power iteration vs dense eigensolver", check_eigenvector, 1e-8),
    ("heatmap moments, uniform window", check_moments, 1e-12),
    ("coarse loss, uniform assignment", check_losses, 1e-10),
]


def run_all(verbose: bool = False, seed: int = 0) -> bool:
    ok_all = True
    for name, fn, tol in CHECKS:
        t0 = time.perf_counter()
        err = fn(np.random.default_rng(seed))
        ok = err < tol
        ok_all &= ok
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'}  {name:42s} err={err:.3e} tol={tol:.0e} "
                  f"({1000 * (time.perf_counter() - t0):.0f} ms)")
    return ok_all
