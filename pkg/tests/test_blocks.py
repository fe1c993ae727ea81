import numpy as np
import pytest

from catsnet import tensor as T
from catsnet.attention import CROSS_WIRING, SELF_WIRING
from catsnet.blocks import CrossAttentionBlock, block_stack, cross_attention_block, layered_block_stack
from catsnet.errors import ConfigError, EmptyStack
from catsnet.tensor import Tensor, gradcheck


def ln(x, eps=1e-5):
    return T.layer_norm(Tensor(x), np.ones(x.shape[-1]), np.zeros(x.shape[-1]), eps).data


def zero_block(block):
    for name, p in block.named_parameters():
        if "norm" not in name:
            p.data[...] = 0.0
    return block


@pytest.fixture(params=["mlp", "bilstm"])
def variant(request):
    return request.param


class TestBlock:
    def test_zero_weights_pass_input_through_norms(self, rng, variant):
        block = zero_block(CrossAttentionBlock(8, 2, variant, rng))
        x = rng.normal(size=(2, 3, 8))
        out = block(x, rng.normal(size=(2, 4, 8))).data
        np.testing.assert_array_equal(out, ln(ln(x)))

    def test_source_indistinguishability(self, rng, variant):
        block = CrossAttentionBlock(8, 2, variant, rng)
        x = rng.normal(size=(2, 3, 8))
        np.testing.assert_array_equal(block(x, x.copy(), CROSS_WIRING).data, block(x, x.copy(), SELF_WIRING).data)

    def test_gradcheck_mlp_block(self, rng):
        block = CrossAttentionBlock(8, 2, "mlp", rng)
        x_self, x_other = rng.normal(size=(1, 3, 8)), rng.normal(size=(1, 3, 8))
        w = rng.normal(size=(1, 3, 8))
        assert gradcheck(lambda *_: T.sum(T.mul(block(x_self, x_other), w)), block.parameters()) < 1e-5

    def test_gradcheck_bilstm_block(self, rng):
        block = CrossAttentionBlock(4, 2, "bilstm", rng)
        x_self, x_other = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 2, 4))
        ms, mo = np.array([[1, 1, 0], [1, 1, 1]], bool), np.array([[1, 1], [1, 0]], bool)
        w = rng.normal(size=(2, 3, 4))
        loss = lambda *_: T.sum(T.mul(block(x_self, x_other, CROSS_WIRING, ms, mo), w))  # noqa: E731
        assert gradcheck(loss, block.parameters()) < 1e-5

    @pytest.mark.parametrize("n_other", [1, 3, 7])
    def test_output_shape_independent_of_other_length(self, rng, variant, n_other):
        block = CrossAttentionBlock(8, 4, variant, rng)
        assert block(rng.normal(size=(2, 5, 8)), rng.normal(size=(2, n_other, 8))).shape == (2, 5, 8)

    def test_padded_other_position_is_ignored(self, rng, variant):
        block = CrossAttentionBlock(8, 2, variant, rng)
        x, other = rng.normal(size=(2, 3, 8)), rng.normal(size=(2, 4, 8))
        mo = np.array([[True, True, False, False], [True, True, True, False]])
        base = block(x, other, CROSS_WIRING, None, mo).data
        other2 = other.copy()
        other2[:, 3] += 50.0
        other2[0, 2] -= 20.0
        np.testing.assert_array_equal(block(x, other2, CROSS_WIRING, None, mo).data, base)

    def test_post_norm_statistics(self, rng, variant):
        block = CrossAttentionBlock(8, 2, variant, rng, norm_eps=1e-12)
        out = block(rng.normal(size=(3, 4, 8)), rng.normal(size=(3, 5, 8))).data
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-6)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-6)

    def test_unknown_sublayer(self, rng):
        with pytest.raises(ConfigError):
            CrossAttentionBlock(8, 2, "gru", rng)

    def test_mlp_width(self, rng):
        block = CrossAttentionBlock(8, 2, "mlp", rng)
        assert block.sublayer.fc1.weight.shape == (8, 32)


class TestStack:
    def test_empty(self, rng):
        with pytest.raises(EmptyStack):
            block_stack(rng.normal(size=(1, 2, 4)), rng.normal(size=(1, 2, 4)), [])

    def test_single(self, rng):
        block = CrossAttentionBlock(8, 2, "mlp", rng)
        x, o = rng.normal(size=(2, 3, 8)), rng.normal(size=(2, 2, 8))
        np.testing.assert_array_equal(block_stack(x, o, [block]).data, cross_attention_block(x, o, block).data)

    def test_three_zero_blocks(self, rng, variant):
        blocks = [zero_block(CrossAttentionBlock(8, 2, variant, rng)) for _ in range(3)]
        x = rng.normal(size=(2, 3, 8))
        expected = x
        for _ in range(3):
            expected = ln(ln(expected))
        np.testing.assert_array_equal(block_stack(x, rng.normal(size=(2, 5, 8)), blocks).data, expected)

    def test_two_blocks_compose(self, rng, variant):
        b1, b2 = CrossAttentionBlock(8, 2, variant, rng), CrossAttentionBlock(8, 2, variant, rng)
        x, o = rng.normal(size=(2, 3, 8)), rng.normal(size=(2, 4, 8))
        manual = b2(b1(x, o), o).data
        assert manual.tobytes() == block_stack(x, o, [b1, b2]).data.tobytes()

    def test_layered_matches_raw_at_depth_one(self, rng):
        block = CrossAttentionBlock(8, 2, "mlp", rng)
        a, b = rng.normal(size=(2, 3, 8)), rng.normal(size=(2, 4, 8))
        la, lb = layered_block_stack(a, b, [block])
        np.testing.assert_array_equal(la.data, block_stack(a, b, [block]).data)
        np.testing.assert_array_equal(lb.data, block_stack(b, a, [block]).data)

    def test_layered_differs_when_deeper(self, rng):
        blocks = [CrossAttentionBlock(8, 2, "mlp", rng) for _ in range(2)]
        a, b = rng.normal(size=(2, 3, 8)), rng.normal(size=(2, 4, 8))
        la, _ = layered_block_stack(a, b, blocks)
        assert not np.allclose(la.data, block_stack(a, b, blocks).data)
