"""Score matrix, optimal-transport / dual-softmax assignment and MNN filtering."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .errors import DimMismatch, EmptyInput
from .features import TokenSet

DEFAULT_TEMPERATURE = 0.1
DEFAULT_BIN_SCORE = 1.0
# exp(-spread) must stay far above the float64 underflow threshold
_SCALING_MAX_SPREAD = 200.0


@dataclass
class ScoreMatrix:
    s: np.ndarray  # (|T|, |I|), already divided by the temperature
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self):
        self.s = np.atleast_2d(np.asarray(self.s, dtype=np.float64))
        if not np.all(np.isfinite(self.s)):
            raise ValueError("scores must be finite")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass
class AssignmentMatrix:
    """Match confidences. For OT, rows and columns are rescaled so that every
    real row (column) sums to 1 together with its dustbin entry."""

    c: np.ndarray
    method: str  # "OT" | "DS"
    dustbin_row: Optional[np.ndarray] = None  # per template row: mass sent to the dustbin column
    dustbin_col: Optional[np.ndarray] = None  # per image column: mass sent to the dustbin row


@dataclass
class CoarseMatchSet:
    t_idx: np.ndarray  # template token indices
    i_idx: np.ndarray  # image token indices
    scores: np.ndarray  # confidence of each pair

    def __len__(self) -> int:
        return len(self.t_idx)

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.t_idx.tolist(), self.i_idx.tolist()))


def score_matrix(ft: TokenSet, fi: TokenSet, temperature: float = DEFAULT_TEMPERATURE) -> ScoreMatrix:
    if len(ft) == 0 or len(fi) == 0:
        raise EmptyInput("token sets must be non-empty")
    if ft.dim != fi.dim:
        raise DimMismatch(f"descriptor dims differ: {ft.dim} vs {fi.dim}")
    return ScoreMatrix(ft.descriptors @ fi.descriptors.T / temperature, temperature)


def _augment(s: np.ndarray, bin_score: float) -> np.ndarray:
    m, n = s.shape
    z = np.full((m + 1, n + 1), float(bin_score))
    z[:m, :n] = s
    return z


def _log_marginals(m: int, n: int):
    # Real rows/columns carry 1/m each; dustbin row carries n/m, dustbin column 1.
    log_mu = np.full(m + 1, -np.log(m))
    log_mu[m] = np.log(n) - np.log(m)
    log_nu = np.full(n + 1, -np.log(m))
    log_nu[n] = 0.0
    return log_mu, log_nu


def sinkhorn_log(z: np.ndarray, log_mu: np.ndarray, log_nu: np.ndarray, iters: int) -> np.ndarray:
    """Log-domain Sinkhorn on an augmented score matrix; returns log transport plan."""
    u = np.zeros_like(log_mu)
    v = np.zeros_like(log_nu)
    for _ in range(iters):
        u = log_mu - logsumexp(z + v[None, :], axis=1)
        v = log_nu - logsumexp(z + u[:, None], axis=0)
    return z + u[:, None] + v[None, :]


def _sinkhorn_scaling(z, log_mu, log_nu, iters):
    """Same iteration as ``sinkhorn_log`` in the exponential domain."""
    shift = z.max()
    k = np.exp(z - shift)
    mu, nu = np.exp(log_mu), np.exp(log_nu)
    b = np.ones_like(nu)
    for _ in range(iters):
        a = mu / (k @ b)
        b = nu / (k.T @ a)
    with np.errstate(divide="ignore"):
        return np.log(a)[:, None] + (z - shift) + np.log(b)[None, :] + 0.0


def sinkhorn(sm: ScoreMatrix, iters: int = 100, bin_score: float = DEFAULT_BIN_SCORE) -> AssignmentMatrix:
    """Partial assignment by entropic OT with one dustbin row and column."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    m, n = sm.s.shape
    z = _augment(sm.s, bin_score)
    log_mu, log_nu = _log_marginals(m, n)
    if z.max() - z.min() < _SCALING_MAX_SPREAD:
        log_p = _sinkhorn_scaling(z, log_mu, log_nu, iters)
    else:
        log_p = sinkhorn_log(z, log_mu, log_nu, iters)
    p = np.exp(log_p + np.log(m))
    return AssignmentMatrix(p[:m, :n], "OT", dustbin_row=p[:m, n], dustbin_col=p[m, :n])


def dual_softmax(sm: ScoreMatrix) -> AssignmentMatrix:
    s = sm.s
    row = np.exp(s - s.max(axis=1, keepdims=True))
    row /= row.sum(axis=1, keepdims=True)
    col = np.exp(s - s.max(axis=0, keepdims=True))
    col /= col.sum(axis=0, keepdims=True)
    return AssignmentMatrix(row * col, "DS")


def mnn_filter(a: AssignmentMatrix, theta_c: float = 0.2) -> CoarseMatchSet:
    """Keep (i, j) when c[i, j] is the maximum of its row and column and >= theta_c."""
    if not (0 < theta_c < 1):
        raise ValueError("theta_c must lie in (0, 1)")
    c = a.c
    if c.size == 0:
        empty = np.zeros(0, dtype=int)
        return CoarseMatchSet(empty, empty, np.zeros(0))
    best_j = np.argmax(c, axis=1)  # lowest j on ties
    best_i = np.argmax(c, axis=0)  # lowest i on ties
    rows = np.arange(c.shape[0])
    vals = c[rows, best_j]
    keep = (best_i[best_j] == rows) & (vals >= theta_c)
    return CoarseMatchSet(rows[keep], best_j[keep], vals[keep])
