"""2-D rotary position encoding, softmax and linear attention, transformer blocks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, EmptyKeys
from .features import TokenSet
from .weightfile import load_arrays, save_arrays


@dataclass(frozen=True)
class RotaryEncoder:
    dim: int

    def __post_init__(self):
        if self.dim <= 0 or self.dim % 4:
            raise DimMismatch(f"rotary dim must be a positive multiple of 4, got {self.dim}")

    @property
    def theta(self) -> np.ndarray:
        k = np.arange(self.dim // 4)
        return 1.0 / 10000.0 ** (4.0 * k / self.dim)


def rope_apply(enc: RotaryEncoder, pos, f) -> np.ndarray:
    """Rotate features by Theta(pos).

    Each 4-channel block k turns its first pair by ``x * theta_k`` and its second
    pair by ``y * theta_k``. Accepts a single position/vector or batches (N, 2)/(N, C).
    """
    f = np.asarray(f, dtype=np.float64)
    pos = np.asarray(pos, dtype=np.float64)
    if f.shape[-1] != enc.dim:
        raise DimMismatch(f"feature dim {f.shape[-1]} != encoder dim {enc.dim}")
    single = f.ndim == 1
    f2 = np.atleast_2d(f)
    p2 = np.atleast_2d(pos)
    blocks = f2.reshape(len(f2), -1, 4)
    ax = p2[:, 0:1] * enc.theta  # (N, C/4)
    ay = p2[:, 1:2] * enc.theta
    cx, sx, cy, sy = np.cos(ax), np.sin(ax), np.cos(ay), np.sin(ay)
    out = np.empty_like(blocks)
    out[..., 0] = cx * blocks[..., 0] - sx * blocks[..., 1]
    out[..., 1] = sx * blocks[..., 0] + cx * blocks[..., 1]
    out[..., 2] = cy * blocks[..., 2] - sy * blocks[..., 3]
    out[..., 3] = sy * blocks[..., 2] + cy * blocks[..., 3]
    out = out.reshape(f2.shape)
    return out[0] if single else out


def elu_feature_map(x: np.ndarray) -> np.ndarray:
    """elu(x) + 1, strictly positive."""
    return np.where(x >= 0, x + 1.0, np.exp(np.minimum(x, 0.0)))


def softmax_attention(q, k, v) -> np.ndarray:
    """Softmax(Q K^T) V, the O(N^2) reference."""
    q, k, v = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (q, k, v))
    if len(k) == 0:
        raise EmptyKeys("attention needs at least one key")
    if len(k) != len(v):
        raise DimMismatch("keys and values differ in count")
    scores = q @ k.T
    scores -= scores.max(axis=1, keepdims=True)
    p = np.exp(scores)
    p /= p.sum(axis=1, keepdims=True)
    return p @ v


def linear_attention(q, k, v, positions_q, positions_kv, enc: RotaryEncoder) -> np.ndarray:
    """Kernelized attention with rotary factors on queries, keys and values.

    out_m = sum_n <R_m phi(q_m), R_n phi(k_n)> R_n v_n / sum_n <phi(q_m), phi(k_n)>

    evaluated through (sum_n R_n phi(k_n) (R_n v_n)^T) in O(N C^2).
    """
    q, k, v = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (q, k, v))
    if len(k) == 0:
        raise EmptyKeys("attention needs at least one key")
    if len(k) != len(v) or len(k) != len(np.atleast_2d(positions_kv)):
        raise DimMismatch("keys, values and key positions differ in count")
    if len(q) != len(np.atleast_2d(positions_q)):
        raise DimMismatch("queries and query positions differ in count")
    if not (q.shape[1] == k.shape[1] == v.shape[1] == enc.dim):
        raise DimMismatch("query/key/value dims must equal the encoder dim")
    fq, fk = elu_feature_map(q), elu_feature_map(k)
    rq = rope_apply(enc, positions_q, fq)
    rk = rope_apply(enc, positions_kv, fk)
    rv = rope_apply(enc, positions_kv, v)
    kv = rk.T @ rv  # (C, C)
    num = rq @ kv
    den = fq @ fk.sum(axis=0)
    return num / den[:, None]


def linear_attention_bruteforce(q, k, v, positions_q, positions_kv, enc: RotaryEncoder) -> np.ndarray:
    """Direct double sum of the same formula; O(N^2) oracle for ``linear_attention``."""
    q, k, v = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (q, k, v))
    pq, pk = np.atleast_2d(positions_q), np.atleast_2d(positions_kv)
    fk = elu_feature_map(k)
    rk = rope_apply(enc, pk, fk)
    rv = rope_apply(enc, pk, v)
    out = np.zeros((len(q), v.shape[1]))
    for m in range(len(q)):
        fq = elu_feature_map(q[m])
        rq = rope_apply(enc, pq[m], fq)
        # explicit pairwise weights a_mn, then the weighted sum over n
        a = rk @ rq
        out[m] = (a[:, None] * rv).sum(axis=0) / (fk @ fq).sum()
    return out


_SUBLAYER_KEYS = ("wq", "wk", "wv", "wo", "w1", "b1", "w2", "b2")


@dataclass
class AttentionBlockWeights:
    """Per layer: a self-attention and a cross-attention sublayer, each with its own FFN.

    ``layers[i]["self"|"cross"]`` maps wq, wk, wv, wo (C x C), w1 (2C x C), b1 (2C),
    w2 (C x 2C), b2 (C) to arrays.
    """

    dim: int
    layers: list[dict[str, dict[str, np.ndarray]]]

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @classmethod
    def seeded(cls, dim: int, n_layers: int, seed: int, gain: float = 1.0) -> "AttentionBlockWeights":
        rng = np.random.default_rng(seed)
        hidden = 2 * dim

        def sub():
            return {
                "wq": rng.normal(0, gain / np.sqrt(dim), (dim, dim)),
                "wk": rng.normal(0, gain / np.sqrt(dim), (dim, dim)),
                "wv": rng.normal(0, gain / np.sqrt(dim), (dim, dim)),
                "wo": rng.normal(0, gain / np.sqrt(dim), (dim, dim)),
                "w1": rng.normal(0, gain / np.sqrt(dim), (hidden, dim)),
                "b1": np.zeros(hidden),
                "w2": rng.normal(0, gain / np.sqrt(hidden), (dim, hidden)),
                "b2": np.zeros(dim),
            }

        return cls(dim, [{"self": sub(), "cross": sub()} for _ in range(n_layers)])

    @classmethod
    def zeros(cls, dim: int, n_layers: int) -> "AttentionBlockWeights":
        w = cls.seeded(dim, n_layers, 0)
        for layer in w.layers:
            for sub in layer.values():
                for key in sub:
                    sub[key] = np.zeros_like(sub[key])
        return w

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {f"layer{i}.{kind}.{key}": layer[kind][key]
                for i, layer in enumerate(self.layers)
                for kind in ("self", "cross") for key in _SUBLAYER_KEYS}

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "AttentionBlockWeights":
        n = 1 + max(int(name.split(".")[0][len("layer"):]) for name in arrays)
        layers = [{kind: {key: arrays[f"layer{i}.{kind}.{key}"] for key in _SUBLAYER_KEYS}
                   for kind in ("self", "cross")} for i in range(n)]
        dim = layers[0]["self"]["wq"].shape[0]
        for layer in layers:
            for sub in layer.values():
                if sub["wq"].shape != (dim, dim) or sub["w2"].shape[0] != dim:
                    raise DimMismatch("inconsistent attention weight shapes")
        return cls(dim, layers)

    def save(self, path) -> None:
        save_arrays(path, self.to_arrays())

    @classmethod
    def load(cls, path) -> "AttentionBlockWeights":
        return cls.from_arrays(load_arrays(path))


def _sublayer(x, pos_x, src, pos_src, w, enc):
    msg = linear_attention(x @ w["wq"].T, src @ w["wk"].T, src @ w["wv"].T, pos_x, pos_src, enc)
    x = x + msg @ w["wo"].T
    hidden = np.maximum(x @ w["w1"].T + w["b1"], 0.0)
    return x + hidden @ w["w2"].T + w["b2"]


def _unit_rows(x):
    n = np.linalg.norm(x, axis=1, keepdims=True)
    return np.divide(x, n, out=np.zeros_like(x), where=n > 0)


def run_transformer(t_tokens: TokenSet, i_tokens: TokenSet,
                    w: AttentionBlockWeights) -> tuple[TokenSet, TokenSet]:
    """Interleaved self/cross linear-attention layers shared by both token sets."""
    if len(t_tokens) == 0 or len(i_tokens) == 0:
        raise EmptyKeys("both token sets must be non-empty")
    if t_tokens.dim != w.dim or i_tokens.dim != w.dim:
        raise DimMismatch("token dim does not match weights")
    enc = RotaryEncoder(w.dim)
    ft, fi = t_tokens.descriptors, i_tokens.descriptors
    pt, pi = t_tokens.positions, i_tokens.positions
    for layer in w.layers:
        ft, fi = (_sublayer(ft, pt, ft, pt, layer["self"], enc),
                  _sublayer(fi, pi, fi, pi, layer["self"], enc))
        ft, fi = (_sublayer(ft, pt, fi, pi, layer["cross"], enc),
                  _sublayer(fi, pi, ft, pt, layer["cross"], enc))
    return (TokenSet(_unit_rows(ft), pt, t_tokens.side),
            TokenSet(_unit_rows(fi), pi, i_tokens.side))
