import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from ctfmatch.consistency import (
    ConsistencyParams,
    angle_property,
    angular_compat,
    build_compat_matrix,
    combine_weights,
    distance_compat,
    knn_indices,
    leading_eigenvector,
    normalize_pairwise_distances,
)
from ctfmatch.errors import DegenerateSet, LengthMismatch, TooFewMatches, ZeroDenominator
from ctfmatch.geometry import similarity_about

seeds = st.integers(0, 2**31 - 1)


def _angle(u, v):
    """Unsigned angle through the cosine formula."""
    cos = (u[0] * v[0] + u[1] * v[1]) / (math.hypot(*u) * math.hypot(*v))
    return math.acos(max(-1.0, min(1.0, cos)))


def _planted(seed, n_in=20, n_out=10):
    rng = np.random.default_rng(seed)
    t = rng.uniform(0, 640, (n_in + n_out, 2))
    h = similarity_about(rng.uniform(200, 400, 2), rng.uniform(0.8, 1.2), rng.uniform(-np.pi, np.pi))
    i = h(t)
    i[n_in:] = rng.uniform(0, 640, (n_out, 2))
    return t, i


class TestDistances:
    def test_two_points(self):
        np.testing.assert_allclose(normalize_pairwise_distances([[0, 0], [3, 4]]), [[0, 1], [1, 0]])

    def test_unit_square(self):
        sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1.0]])
        mean = (4 + 2 * math.sqrt(2)) / 6
        d = normalize_pairwise_distances(sq)
        assert d[0, 1] == pytest.approx(1 / mean)
        assert d[0, 2] == pytest.approx(math.sqrt(2) / mean)

    @given(seeds, st.floats(0.01, 100))
    def test_scale_cancels(self, seed, k):
        p = np.random.default_rng(seed).uniform(0, 50, (7, 2))
        np.testing.assert_allclose(normalize_pairwise_distances(k * p), normalize_pairwise_distances(p), atol=1e-12)

    def test_coincident(self):
        with pytest.raises(DegenerateSet):
            normalize_pairwise_distances([[1, 1], [1, 1]])


class TestCompatTerms:
    def test_distance_values(self):
        assert distance_compat(2.0, 2.0) == 1.0
        assert distance_compat(1.4, 1.0, 0.4) == pytest.approx(0.0, abs=1e-12)
        assert distance_compat(1.2, 1.0, 0.4) == pytest.approx(0.75)

    def test_distance_zero_denominator(self):
        with pytest.raises(ZeroDenominator):
            distance_compat(1.0, 0.0)

    def test_angle_values(self):
        assert angular_compat(0.7, 0.7) == 1.0
        assert angular_compat(1.5, 0.5, 1.0) == 0.0
        assert angular_compat(0.5, 0.0, 1.0) == pytest.approx(0.75)


class TestAngleProperty:
    def test_antipodal_neighbor(self):
        pts = np.array([[0, 0], [5, 0], [-1, 0], [0, 7], [0, 9.0]])
        ct, _ = angle_property(0, 1, pts, pts, k_nn=1)
        assert ct == pytest.approx(math.pi)

    def test_collinear_same_side(self):
        pts = np.array([[0, 0], [10, 0], [1, 0], [2, 0], [3, 0.0]])
        ct, ci = angle_property(0, 1, pts, pts, k_nn=3)
        assert ct == 0.0 and ci == 0.0

    @given(seeds)
    def test_exhaustive_on_grid(self, seed):
        rng = np.random.default_rng(seed)
        pts = rng.choice(100, 5, replace=False)
        pts = np.column_stack([pts % 10, pts // 10]).astype(float)
        other = pts + rng.integers(-2, 3, (5, 2))
        a, b, k = 0, 4, 2
        nbrs = knn_indices(pts, k)[a]
        assume(all(np.any(p[a] - p[x]) for p in (pts, other) for x in [*nbrs, b]))
        for side, p in zip(angle_property(a, b, pts, other, k_nn=k), (pts, other)):
            cands = [_angle(p[a] - p[x], p[a] - p[b]) for x in nbrs]
            assert side == pytest.approx(max(cands), abs=1e-7)  # acos loses digits near 0 and pi


class TestCompatMatrix:
    def test_same_similarity_is_fully_compatible(self):
        t = np.array([[0, 0], [10, 0.0]])
        h = similarity_about((5, 5), 1.3, 0.4)
        e = build_compat_matrix(t, h(t)).e_mat
        assert e[0, 1] == pytest.approx(1.0)

    def test_equal_terms_ignore_lambda(self):
        t = np.array([[0, 0], [10, 0], [3, 7.0]])
        h = similarity_about((5, 5), 0.9, -0.3)
        a = build_compat_matrix(t, h(t), ConsistencyParams(lambda_c=0.1)).e_mat
        b = build_compat_matrix(t, h(t), ConsistencyParams(lambda_c=0.9)).e_mat
        np.testing.assert_allclose(a, b, atol=1e-12)

    @given(seeds)
    def test_elementwise_oracle(self, seed):
        t, i = _planted(seed, 6, 3)
        p = ConsistencyParams()
        e = build_compat_matrix(t, i, p).e_mat
        dt, di = normalize_pairwise_distances(t), normalize_pairwise_distances(i)
        nbrs = knn_indices(t, p.k_nn)
        for a in range(len(t)):
            assert e[a, a] == 0.0
            for b in range(a + 1, len(t)):
                r = max(dt[a, b], di[a, b]) / min(dt[a, b], di[a, b])
                beta = max(0.0, 1 - (r - 1) ** 2 / p.sigma_d**2)
                alphas = []
                for x, y in ((a, b), (b, a)):
                    ct, ci = angle_property(x, y, t, i, p.k_nn, neighbors=nbrs[x])
                    alphas.append(max(0.0, 1 - (ct - ci) ** 2 / p.sigma_alpha**2))
                ref = p.lambda_c * np.mean(alphas) + (1 - p.lambda_c) * beta
                assert e[a, b] == pytest.approx(ref, abs=1e-12)
                assert e[b, a] == e[a, b]

    @given(seeds, st.floats(0.1, 10))
    def test_scale_invariant(self, seed, k):
        t, i = _planted(seed, 8, 4)
        np.testing.assert_allclose(build_compat_matrix(t, k * i).e_mat, build_compat_matrix(t, i).e_mat, atol=1e-9)

    def test_too_few(self):
        with pytest.raises(TooFewMatches):
            build_compat_matrix([[0, 0]], [[1, 1]])
        with pytest.raises(LengthMismatch):
            build_compat_matrix([[0, 0], [1, 1]], [[1, 1]])


class TestLeadingEigenvector:
    def test_two_by_two(self):
        np.testing.assert_allclose(leading_eigenvector(np.array([[0, 2.0], [2, 0]])).e, [1, 1])

    def test_zero_matrix(self):
        np.testing.assert_array_equal(leading_eigenvector(np.zeros((3, 3))).e, 1.0)

    @given(seeds)
    def test_dense_oracle(self, seed):
        a = np.random.default_rng(seed).uniform(0, 1, (6, 6))
        e_mat = (a + a.T) / 2
        ref = np.abs(np.linalg.eigh(e_mat)[1][:, -1])
        got = leading_eigenvector(e_mat, iters=500, tol=1e-14).e
        assert ref @ got / (np.linalg.norm(ref) * np.linalg.norm(got)) > 1 - 1e-8

    @given(seeds, st.floats(0.01, 100))
    def test_scale_invariant(self, seed, k):
        a = np.random.default_rng(seed).uniform(0, 1, (5, 5))
        e_mat = a + a.T
        np.testing.assert_allclose(leading_eigenvector(k * e_mat).e, leading_eigenvector(e_mat).e, atol=1e-9)

    def test_planted_outliers_rank_low(self):
        wins = 0
        for seed in range(100):
            t, i = _planted(seed)
            e = leading_eigenvector(build_compat_matrix(t, i)).e
            assert e.min() >= 0 and e.max() == 1.0
            wins += e[:20].mean() > e[20:].mean()
        assert wins >= 99


class TestCombineWeights:
    def test_products(self, rng):
        s, e = rng.uniform(0, 1, (2, 6))
        pts = rng.uniform(0, 9, (6, 2))
        np.testing.assert_array_equal(combine_weights(pts, pts, s, np.ones(6)).w, s)
        np.testing.assert_array_equal(combine_weights(pts, pts, np.ones(6), e).w, e)
        np.testing.assert_allclose(combine_weights(pts, pts, s, e).w, s * e, rtol=0, atol=0)

    def test_length(self):
        with pytest.raises(LengthMismatch):
            combine_weights(np.zeros((3, 2)), np.zeros((3, 2)), np.ones(3), np.ones(2))
