import numpy as np
import pytest
from hypothesis import given, strategies as st

from ctfmatch.attention import (
    AttentionBlockWeights,
    RotaryEncoder,
    elu_feature_map,
    linear_attention,
    linear_attention_bruteforce,
    rope_apply,
    run_transformer,
    softmax_attention,
)
from ctfmatch.errors import DimMismatch, EmptyKeys
from ctfmatch.features import TokenSet
from ctfmatch.weightfile import load_arrays, save_arrays

seeds = st.integers(0, 2**31 - 1)


def _rotation_matrix(enc, pos):
    """Dense block-diagonal rotation built from 2x2 blocks."""
    x, y = pos
    m = np.zeros((enc.dim, enc.dim))
    for k, th in enumerate(enc.theta):
        for off, ang in ((0, x * th), (2, y * th)):
            c, s = np.cos(ang), np.sin(ang)
            i = 4 * k + off
            m[i : i + 2, i : i + 2] = [[c, -s], [s, c]]
    return m


class TestRotaryEncoder:
    def test_theta(self):
        th = RotaryEncoder(64).theta
        assert th[0] == 1.0
        assert np.all(np.diff(th) < 0)
        np.testing.assert_allclose(th, [1 / 10000 ** (4 * k / 64) for k in range(16)], rtol=1e-15)

    def test_dim_check(self):
        with pytest.raises(DimMismatch):
            RotaryEncoder(30)
        with pytest.raises(DimMismatch):
            rope_apply(RotaryEncoder(8), (0, 0), np.ones(12))

    def test_zero_position(self, rng):
        f = rng.standard_normal(64)
        np.testing.assert_array_equal(rope_apply(RotaryEncoder(64), (0, 0), f), f)

    @given(seeds)
    def test_matches_dense_rotation(self, seed):
        rng = np.random.default_rng(seed)
        enc = RotaryEncoder(16)
        pos, f = rng.uniform(-40, 40, 2), rng.standard_normal(16)
        np.testing.assert_allclose(rope_apply(enc, pos, f), _rotation_matrix(enc, pos) @ f, atol=1e-12)

    @given(seeds)
    def test_norm_preserved(self, seed):
        rng = np.random.default_rng(seed)
        f = rng.standard_normal(64)
        out = rope_apply(RotaryEncoder(64), rng.uniform(-100, 100, 2), f)
        assert np.linalg.norm(out) == pytest.approx(np.linalg.norm(f), abs=1e-12)

    @given(seeds)
    def test_relative_position_identity(self, seed):
        rng = np.random.default_rng(seed)
        enc = RotaryEncoder(64)
        m, n = rng.uniform(-60, 60, (2, 2))
        f, g = rng.standard_normal((2, 64))
        lhs = rope_apply(enc, m, f) @ rope_apply(enc, n, g)
        assert abs(lhs - f @ rope_apply(enc, n - m, g)) < 1e-9

    def test_batch_equals_single(self, rng):
        enc = RotaryEncoder(8)
        pos, f = rng.uniform(0, 9, (5, 2)), rng.standard_normal((5, 8))
        batch = rope_apply(enc, pos, f)
        for i in range(5):
            np.testing.assert_array_equal(batch[i], rope_apply(enc, pos[i], f[i]))


class TestSoftmaxAttention:
    def test_single_key(self, rng):
        v = rng.standard_normal((1, 8))
        out = softmax_attention(rng.standard_normal((3, 8)), rng.standard_normal((1, 8)), v)
        np.testing.assert_allclose(out, np.repeat(v, 3, axis=0), atol=1e-15)

    def test_equal_scores(self, rng):
        v = rng.standard_normal((6, 4))
        out = softmax_attention(np.zeros((2, 4)), rng.standard_normal((6, 4)), v)
        np.testing.assert_allclose(out, np.tile(v.mean(axis=0), (2, 1)), atol=1e-14)

    def test_matches_loop(self, rng):
        q, k, v = rng.standard_normal((3, 5, 8))
        ref = np.zeros((5, 8))
        for m in range(5):
            e = np.exp([q[m] @ k[n] for n in range(5)])
            ref[m] = sum(e[n] / e.sum() * v[n] for n in range(5))
        np.testing.assert_allclose(softmax_attention(q, k, v), ref, atol=1e-10)

    def test_rows_stochastic(self, rng):
        # identity values expose the attention matrix itself
        q, k = rng.standard_normal((2, 7, 7)) * 3
        np.testing.assert_allclose(softmax_attention(q, k, np.eye(7)).sum(axis=1), 1.0, atol=1e-12)

    def test_empty_keys(self):
        with pytest.raises(EmptyKeys):
            softmax_attention(np.ones((1, 4)), np.zeros((0, 4)), np.zeros((0, 4)))


class TestLinearAttention:
    def test_feature_map(self):
        np.testing.assert_allclose(elu_feature_map(np.array([-1.0, 0.0, 2.0])), [np.exp(-1), 1.0, 3.0])

    @given(seeds, st.integers(1, 64))
    def test_matches_double_sum(self, seed, n):
        rng = np.random.default_rng(seed)
        enc = RotaryEncoder(16)
        q, k, v = rng.standard_normal((3, n, 16))
        pq, pk = rng.integers(0, 60, (2, n, 2)).astype(float)
        fast = linear_attention(q, k, v, pq, pk, enc)
        slow = linear_attention_bruteforce(q, k, v, pq, pk, enc)
        np.testing.assert_allclose(fast, slow, atol=1e-9, rtol=0)

    def test_single_token_same_position(self, rng):
        enc = RotaryEncoder(8)
        q, k, v = rng.standard_normal((3, 1, 8))
        pos = np.array([[3.0, 5.0]])
        out = linear_attention(q, k, v, pos, pos, enc)
        np.testing.assert_allclose(out[0], rope_apply(enc, pos[0], v[0]), atol=1e-12)

    def test_zero_positions_is_plain_kernel_attention(self, rng):
        enc = RotaryEncoder(8)
        q, k, v = rng.standard_normal((3, 6, 8))
        zero = np.zeros((6, 2))
        fq, fk = elu_feature_map(q), elu_feature_map(k)
        plain = (fq @ fk.T) @ v / (fq @ fk.T).sum(axis=1, keepdims=True)
        np.testing.assert_allclose(linear_attention(q, k, v, zero, zero, enc), plain, atol=1e-12)

    @given(seeds)
    def test_numerator_translation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        enc = RotaryEncoder(16)
        fq, fk = elu_feature_map(rng.standard_normal((2, 16)))
        pm, pn, shift = rng.uniform(-30, 30, (3, 2))
        a = rope_apply(enc, pm, fq) @ rope_apply(enc, pn, fk)
        b = rope_apply(enc, pm + shift, fq) @ rope_apply(enc, pn + shift, fk)
        assert abs(a - b) < 1e-9

    def test_count_mismatch(self, rng):
        with pytest.raises(DimMismatch):
            linear_attention(np.ones((2, 8)), np.ones((3, 8)), np.ones((2, 8)),
                             np.zeros((2, 2)), np.zeros((3, 2)), RotaryEncoder(8))


class TestTransformer:
    def _tokens(self, rng, n, dim=16, side="template"):
        d = rng.standard_normal((n, dim))
        return TokenSet(d / np.linalg.norm(d, axis=1, keepdims=True), rng.integers(0, 20, (n, 2)), side)

    def test_zero_weights_identity(self, rng):
        t, i = self._tokens(rng, 3), self._tokens(rng, 4, side="image")
        ot, oi = run_transformer(t, i, AttentionBlockWeights.zeros(16, 4))
        np.testing.assert_allclose(ot.descriptors, t.descriptors, atol=1e-15)
        np.testing.assert_allclose(oi.descriptors, i.descriptors, atol=1e-15)
        np.testing.assert_array_equal(ot.positions, t.positions)

    def test_swap_symmetry(self, rng):
        t, i = self._tokens(rng, 5), self._tokens(rng, 7, side="image")
        w = AttentionBlockWeights.seeded(16, 2, seed=3)
        a_t, a_i = run_transformer(t, i, w)
        b_i, b_t = run_transformer(i, t, w)
        np.testing.assert_allclose(a_t.descriptors, b_t.descriptors, atol=1e-12)
        np.testing.assert_allclose(a_i.descriptors, b_i.descriptors, atol=1e-12)

    def test_deterministic_unit_outputs(self, rng):
        t, i = self._tokens(rng, 3), self._tokens(rng, 4, side="image")
        runs = [run_transformer(t, i, AttentionBlockWeights.seeded(16, 4, seed=7)) for _ in range(2)]
        assert runs[0][0].descriptors.tobytes() == runs[1][0].descriptors.tobytes()
        np.testing.assert_allclose(np.linalg.norm(runs[0][1].descriptors, axis=1), 1.0, atol=1e-12)

    def test_empty_rejected(self, rng):
        with pytest.raises(EmptyKeys):
            run_transformer(TokenSet(np.zeros((0, 16)), np.zeros((0, 2))), self._tokens(rng, 2),
                            AttentionBlockWeights.zeros(16, 1))


class TestWeightFiles:
    def test_round_trip(self, tmp_path, rng):
        w = AttentionBlockWeights.seeded(8, 2, seed=1)
        w.save(tmp_path / "w.bin")
        back = AttentionBlockWeights.load(tmp_path / "w.bin")
        assert back.n_layers == 2
        for name, arr in w.to_arrays().items():
            np.testing.assert_array_equal(back.to_arrays()[name], arr)

    def test_header_layout(self, tmp_path):
        save_arrays(tmp_path / "a.bin", {"x": np.arange(6.0).reshape(2, 3)})
        raw = (tmp_path / "a.bin").read_bytes()
        assert raw.startswith(b"CTFW 1\nx 2 3\nEND\n")
        assert raw.endswith(np.arange(6.0).astype("<f8").tobytes())
        np.testing.assert_array_equal(load_arrays(tmp_path / "a.bin")["x"], np.arange(6.0).reshape(2, 3))
