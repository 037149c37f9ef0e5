import numpy as np
import pytest
from hypothesis import given, strategies as st

from ctfmatch.coarse import (
    AssignmentMatrix,
    ScoreMatrix,
    _augment,
    _log_marginals,
    _sinkhorn_scaling,
    dual_softmax,
    mnn_filter,
    score_matrix,
    sinkhorn,
    sinkhorn_log,
)
from ctfmatch.errors import DimMismatch
from ctfmatch.features import TokenSet

seeds = st.integers(0, 2**31 - 1)


def _textbook_sinkhorn(s, bin_score, iters):
    """Dustbin-augmented OT, marginals 1/(m+n) per real row/column, m/(m+n) and n/(m+n)
    for the bins; plain exp-domain alternating scaling, result scaled by (m+n)."""
    m, n = s.shape
    z = np.full((m + 1, n + 1), bin_score, dtype=float)
    z[:m, :n] = s
    k = np.exp(z - z.max())
    mu = np.r_[np.ones(m), n] / (m + n)
    nu = np.r_[np.ones(n), m] / (m + n)
    a, b = np.ones(m + 1), np.ones(n + 1)
    for _ in range(iters):
        a = mu / (k @ b)
        b = nu / (k.T @ a)
    p = a[:, None] * k * b[None, :] * (m + n)
    return p[:m, :n], p[:m, n], p[m, :n]


def _unit(rng, n, d=8):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


class TestScoreMatrix:
    def test_singleton(self):
        v = np.array([[0.6, 0.8, 0, 0]])
        sm = score_matrix(TokenSet(v, [[0, 0]]), TokenSet(v, [[1, 1]], "image"), temperature=0.1)
        np.testing.assert_allclose(sm.s, [[10.0]])

    def test_orthogonal(self):
        sm = score_matrix(TokenSet(np.eye(4)[:2], np.zeros((2, 2))), TokenSet(np.eye(4)[2:], np.zeros((2, 2)), "image"))
        np.testing.assert_array_equal(sm.s, 0)

    def test_double_loop(self, rng):
        a, b = _unit(rng, 5), _unit(rng, 7)
        sm = score_matrix(TokenSet(a, np.zeros((5, 2))), TokenSet(b, np.zeros((7, 2)), "image"), 0.02)
        ref = [[sum(a[i, c] * b[j, c] for c in range(8)) / 0.02 for j in range(7)] for i in range(5)]
        np.testing.assert_allclose(sm.s, ref, atol=1e-12)

    def test_dim_mismatch(self, rng):
        with pytest.raises(DimMismatch):
            score_matrix(TokenSet(_unit(rng, 2, 4), np.zeros((2, 2))), TokenSet(_unit(rng, 2, 8), np.zeros((2, 2))))


class TestSinkhorn:
    def test_strong_singleton(self):
        assert sinkhorn(ScoreMatrix([[50.0]]), 100, bin_score=1.0).c[0, 0] >= 0.99

    @pytest.mark.parametrize("n", [2, 5, 9])
    def test_uniform_square(self, n):
        a = sinkhorn(ScoreMatrix(np.full((n, n), 1.0)), 100, bin_score=1.0)
        real_mass = 1.0 - a.dustbin_row
        np.testing.assert_allclose(a.c, np.broadcast_to(real_mass[:, None] / n, (n, n)), atol=1e-6)
        np.testing.assert_allclose(a.c, a.c[0, 0], atol=1e-12)

    @given(seeds)
    def test_textbook_oracle(self, seed):
        s = np.random.default_rng(seed).standard_normal((3, 4)) * 2
        a = sinkhorn(ScoreMatrix(s), 100, bin_score=1.0)
        c, dr, dc = _textbook_sinkhorn(s, 1.0, 100)
        np.testing.assert_allclose(a.c, c, atol=1e-8)
        np.testing.assert_allclose(a.dustbin_row, dr, atol=1e-8)
        np.testing.assert_allclose(a.dustbin_col, dc, atol=1e-8)

    @given(seeds, st.sampled_from([(1.0, 100), (2.0, 100), (3.0, 400)]))
    def test_marginals(self, seed, scale_iters):
        # sharper scores converge more slowly, so they get a larger iteration budget
        scale, iters = scale_iters
        s = np.random.default_rng(seed).standard_normal((32, 48)) * scale
        a = sinkhorn(ScoreMatrix(s), iters)
        np.testing.assert_allclose(a.c.sum(axis=1) + a.dustbin_row, 1.0, atol=1e-6)
        np.testing.assert_allclose(a.c.sum(axis=0) + a.dustbin_col, 1.0, atol=1e-6)

    @given(seeds, st.floats(-20, 20))
    def test_shift_invariance(self, seed, shift):
        # the dustbin is an entry of the augmented matrix, so it shifts along
        s = np.random.default_rng(seed).standard_normal((12, 15)) * 3
        a = sinkhorn(ScoreMatrix(s), 100, bin_score=1.0)
        b = sinkhorn(ScoreMatrix(s + shift), 100, bin_score=1.0 + shift)
        np.testing.assert_allclose(a.c, b.c, atol=1e-8)

    @given(seeds)
    def test_log_and_scaling_paths_agree(self, seed):
        s = np.random.default_rng(seed).standard_normal((5, 6)) * 3
        z = _augment(s, 1.0)
        log_mu, log_nu = _log_marginals(5, 6)
        np.testing.assert_allclose(np.exp(sinkhorn_log(z, log_mu, log_nu, 100)),
                                   np.exp(_sinkhorn_scaling(z, log_mu, log_nu, 100)), atol=1e-12)

    def test_wide_scores_stay_finite(self, rng):
        a = sinkhorn(ScoreMatrix(rng.standard_normal((6, 7)) * 200), 100)
        assert np.all(np.isfinite(a.c)) and np.all(a.c >= 0)


class TestDualSoftmax:
    def test_singleton(self):
        assert dual_softmax(ScoreMatrix([[3.0]])).c[0, 0] == pytest.approx(1.0)

    def test_diagonal(self):
        c = dual_softmax(ScoreMatrix([[10.0, 0.0], [0.0, 10.0]])).c
        assert c[0, 0] >= 0.99 and c[1, 1] >= 0.99

    def test_uniform(self):
        np.testing.assert_allclose(dual_softmax(ScoreMatrix(np.ones((4, 4)))).c, 1 / 16, atol=1e-15)

    @given(seeds)
    def test_bounded_by_row_softmax(self, seed):
        s = np.random.default_rng(seed).standard_normal((6, 9)) * 4
        c = dual_softmax(ScoreMatrix(s)).c
        row = np.exp(s) / np.exp(s).sum(axis=1, keepdims=True)
        assert np.all(c > 0) and np.all(c <= 1)
        assert np.all(c <= row + 1e-15)


class TestMNN:
    def test_identity_dominant(self):
        c = np.full((4, 4), 0.05) + 0.8 * np.eye(4)
        assert mnn_filter(AssignmentMatrix(c, "DS")).pairs == [(0, 0), (1, 1), (2, 2), (3, 3)]

    def test_row_max_not_column_max(self):
        c = np.array([[0.3, 0.5], [0.1, 0.9]])
        assert (0, 1) not in mnn_filter(AssignmentMatrix(c, "DS"), 0.2).pairs

    def test_below_threshold(self):
        assert len(mnn_filter(AssignmentMatrix(np.full((3, 3), 0.1), "DS"), 0.2)) == 0

    def test_ties_lowest_index(self):
        c = np.array([[0.5, 0.5], [0.1, 0.1]])
        assert mnn_filter(AssignmentMatrix(c, "DS"), 0.2).pairs == [(0, 0)]

    @given(seeds, st.floats(0.01, 0.5), st.floats(0.0, 0.4))
    def test_partial_matching_and_monotone(self, seed, lo, step):
        c = np.random.default_rng(seed).uniform(0, 1, (8, 10))
        a = mnn_filter(AssignmentMatrix(c, "DS"), lo)
        assert len(set(a.t_idx)) == len(a) and len(set(a.i_idx)) == len(a)
        assert np.all(a.scores >= lo)
        b = mnn_filter(AssignmentMatrix(c, "DS"), min(lo + step, 0.99))
        assert set(b.pairs) <= set(a.pairs)
        for i, j in a.pairs:
            assert c[i, j] == c[i].max() == c[:, j].max()
