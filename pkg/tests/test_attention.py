import math

import numpy as np
import pytest

from catsnet import tensor as T
from catsnet.attention import (
    CROSS_WIRING,
    SELF_WIRING,
    AttentionWiring,
    MultiHeadAttention,
    multi_head_cross_attention,
    scaled_dot_attention,
)
from catsnet.errors import AllMasked, ConfigError, WiringInvalid
from catsnet.tensor import Tensor, gradcheck


def loop_attention(q, k, v, mask):
    """Per-position scalar evaluation of softmax(q k^T / sqrt(d)) v over valid keys."""
    n_q, d = q.shape
    n_k = k.shape[0]
    out = np.zeros((n_q, v.shape[1]))
    for i in range(n_q):
        scores = []
        for j in range(n_k):
            if mask[j]:
                scores.append(sum(q[i, t] * k[j, t] for t in range(d)) / math.sqrt(d))
            else:
                scores.append(None)
        top = max(s for s in scores if s is not None)
        weights = [0.0 if s is None else math.exp(s - top) for s in scores]
        total = sum(weights)
        for j in range(n_k):
            for t in range(v.shape[1]):
                out[i, t] += weights[j] / total * v[j, t]
    return out


def loop_multi_head(x_q, x_kv, mask_kv, p: MultiHeadAttention):
    """Each head run separately from its own column block, then concatenated."""
    b = x_q.shape[0]
    out = np.zeros((b, x_q.shape[1], p.d_model))
    for bi in range(b):
        heads = []
        for h in range(p.n_heads):
            cols = slice(h * p.d_k, (h + 1) * p.d_k)
            q = naive(x_q[bi], p.w_q.data[:, cols])
            k = naive(x_kv[bi], p.w_k.data[:, cols])
            v = naive(x_kv[bi], p.w_v.data[:, cols])
            heads.append(loop_attention(q, k, v, mask_kv[bi]))
        out[bi] = naive(np.concatenate(heads, axis=1), p.w_o.data)
    return out


def naive(a, b):
    return np.array([[sum(a[i, t] * b[t, j] for t in range(a.shape[1])) for j in range(b.shape[1])]
                     for i in range(a.shape[0])])


class TestScaledDotAttention:
    def test_single_key(self, rng):
        v = rng.normal(size=(1, 1, 4))
        out = scaled_dot_attention(rng.normal(size=(1, 1, 4)), rng.normal(size=(1, 1, 4)), v)
        np.testing.assert_array_equal(out.data, v)

    def test_uniform_weights(self, rng):
        q = np.zeros((1, 2, 3))
        k = rng.normal(size=(1, 3, 3))
        v = rng.normal(size=(1, 3, 3))
        out = scaled_dot_attention(q, k, v, np.ones((1, 3), bool))
        np.testing.assert_allclose(out.data[0], np.broadcast_to(v[0].mean(axis=0), (2, 3)), atol=1e-15)

    def test_loop_oracle(self, rng):
        q, k, v = rng.normal(size=(1, 2, 4)), rng.normal(size=(1, 3, 4)), rng.normal(size=(1, 3, 4))
        mask = np.array([[True, True, False]])
        out = scaled_dot_attention(q, k, v, mask).data
        assert np.max(np.abs(out[0] - loop_attention(q[0], k[0], v[0], mask[0]))) < 1e-10

    def test_rows_sum_to_one_over_valid_keys(self, rng):
        mask = np.array([[True, False, True, True], [True, True, False, False]])
        _, w = scaled_dot_attention(rng.normal(size=(2, 3, 5)), rng.normal(size=(2, 4, 5)),
                                    rng.normal(size=(2, 4, 5)), mask, return_weights=True)
        np.testing.assert_allclose(w.data.sum(axis=-1), 1.0, atol=1e-9)
        assert np.all(w.data[~np.broadcast_to(mask[:, None, :], w.shape)] == 0.0)

    def test_all_masked(self, rng):
        with pytest.raises(AllMasked):
            scaled_dot_attention(rng.normal(size=(2, 1, 2)), rng.normal(size=(2, 2, 2)),
                                 rng.normal(size=(2, 2, 2)), np.array([[True, False], [False, False]]))

    def test_masked_value_perturbation(self, rng):
        q, k, v = rng.normal(size=(1, 2, 3)), rng.normal(size=(1, 4, 3)), rng.normal(size=(1, 4, 3))
        mask = np.array([[True, True, False, True]])
        base = scaled_dot_attention(q, k, v, mask).data
        v2 = v.copy()
        v2[0, 2] += 1e3
        np.testing.assert_array_equal(scaled_dot_attention(q, k, v2, mask).data, base)

    @pytest.mark.parametrize("seed", range(3))
    def test_permutation_equivariance(self, seed):
        r = np.random.default_rng(seed)
        q, k, v = r.normal(size=(1, 3, 4)), r.normal(size=(1, 5, 4)), r.normal(size=(1, 5, 4))
        mask = np.array([[True, False, True, True, True]])
        perm = r.permutation(5)
        base = scaled_dot_attention(q, k, v, mask).data
        permuted = scaled_dot_attention(q, k[:, perm], v[:, perm], mask[:, perm]).data
        assert np.max(np.abs(base - permuted)) < 1e-12


class TestMultiHead:
    def test_degenerate_single_head_identity(self, rng):
        p = MultiHeadAttention(4, 1, rng)
        for w in (p.w_q, p.w_k, p.w_v, p.w_o):
            w.data[...] = np.eye(4)
        x = rng.normal(size=(2, 3, 4))
        mask = np.array([[True, True, False], [True, True, True]])
        out = multi_head_cross_attention(x, rng.normal(size=(2, 5, 4)), p, SELF_WIRING, mask)
        np.testing.assert_allclose(out.data, scaled_dot_attention(x, x, x, mask).data, atol=1e-15)

    def test_identical_inputs_cross_equals_self(self, rng):
        p = MultiHeadAttention(6, 3, rng)
        x = rng.normal(size=(2, 4, 6))
        mask = np.ones((2, 4), bool)
        cross = multi_head_cross_attention(x, x.copy(), p, CROSS_WIRING, mask, mask.copy()).data
        self_ = multi_head_cross_attention(x, x.copy(), p, SELF_WIRING, mask, mask.copy()).data
        np.testing.assert_array_equal(cross, self_)

    def test_two_heads_against_per_head_oracle(self, rng):
        p = MultiHeadAttention(6, 2, rng)
        xs, xo = rng.normal(size=(2, 3, 6)), rng.normal(size=(2, 4, 6))
        mo = np.array([[True, True, True, False], [True, False, False, False]])
        out = multi_head_cross_attention(xs, xo, p, CROSS_WIRING, None, mo).data
        assert np.max(np.abs(out - loop_multi_head(xs, xo, mo, p))) < 1e-12

    def test_output_length_follows_query_source(self, rng):
        p = MultiHeadAttention(4, 2, rng)
        out = multi_head_cross_attention(rng.normal(size=(1, 3, 4)), rng.normal(size=(1, 7, 4)), p)
        assert out.shape == (1, 3, 4)
        flipped = AttentionWiring("other", "self", "self")
        assert multi_head_cross_attention(rng.normal(size=(1, 3, 4)), rng.normal(size=(1, 7, 4)), p,
                                          flipped).shape == (1, 7, 4)

    def test_wiring_invalid(self, rng):
        p = MultiHeadAttention(4, 2, rng)
        x = rng.normal(size=(1, 3, 4))
        with pytest.raises(WiringInvalid):
            multi_head_cross_attention(x, x, p, AttentionWiring("self", "self", "other"))
        with pytest.raises(WiringInvalid):
            multi_head_cross_attention(x, x, p, AttentionWiring("self", "other", "self"))

    def test_heads_must_divide(self, rng):
        with pytest.raises(ConfigError):
            MultiHeadAttention(6, 4, rng)

    def test_parse_wiring(self):
        assert AttentionWiring.parse("self, other ,other") == CROSS_WIRING
        assert str(SELF_WIRING) == "self,self,self"

    @pytest.mark.parametrize("wiring", [CROSS_WIRING, SELF_WIRING])
    def test_gradcheck(self, rng, wiring):
        p = MultiHeadAttention(4, 2, rng)
        xs = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        xo = Tensor(rng.normal(size=(2, 2, 4)), requires_grad=True)
        ms = np.array([[True, True, False], [True, True, True]])
        mo = np.array([[True, False], [True, True]])
        target = rng.normal(size=(2, 3, 4))

        def loss(*_):
            return T.sum(T.mul(multi_head_cross_attention(xs, xo, p, wiring, ms, mo), target))

        assert gradcheck(loss, [xs, xo] + p.parameters()) < 1e-5
