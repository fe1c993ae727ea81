"""Cross-attention block: attention + residual + norm, then MLP or Bi-LSTM + residual + norm."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .attention import CROSS_WIRING, AttentionWiring, MultiHeadAttention
from .errors import ConfigError, EmptyStack
from .nn import LayerNorm, Linear, Module
from .recurrent import LstmParams, bilstm
from .tensor import Tensor

MLP = "mlp"
BILSTM = "bilstm"


class MlpSublayer(Module):
    def __init__(self, d_model: int, d_ff: int, rng: np.random.Generator):
        self.fc1 = Linear(d_model, d_ff, rng)
        self.fc2 = Linear(d_ff, d_model, rng)

    def __call__(self, x: Tensor, mask=None) -> Tensor:
        return self.fc2(T.relu(self.fc1(x)))


class BiLstmSublayer(Module):
    def __init__(self, d_model: int, rng: np.random.Generator):
        if d_model % 2:
            raise ConfigError(f"Bi-LSTM sublayer needs an even d_model, got {d_model}")
        self.fwd = LstmParams(d_model, d_model // 2, rng)
        self.bwd = LstmParams(d_model, d_model // 2, rng)

    def __call__(self, x: Tensor, mask=None) -> Tensor:
        return bilstm(x, self.fwd, self.bwd, mask)


class CrossAttentionBlock(Module):
    def __init__(
        self,
        d_model: int,
        n_heads: int,
        sublayer: str,
        rng: np.random.Generator,
        d_ff: int | None = None,
        norm_eps: float = 1e-5,
    ):
        self.attn = MultiHeadAttention(d_model, n_heads, rng)
        self.norm1 = LayerNorm(d_model, norm_eps)
        if sublayer == MLP:
            self.sublayer = MlpSublayer(d_model, d_ff or 4 * d_model, rng)
        elif sublayer == BILSTM:
            self.sublayer = BiLstmSublayer(d_model, rng)
        else:
            raise ConfigError(f"unknown sublayer variant {sublayer!r}")
        self.norm2 = LayerNorm(d_model, norm_eps)

    def __call__(self, x_self, x_other, wiring=CROSS_WIRING, mask_self=None, mask_other=None):
        return cross_attention_block(x_self, x_other, self, wiring, mask_self, mask_other)


def cross_attention_block(
    x_self,
    x_other,
    params: CrossAttentionBlock,
    wiring: AttentionWiring = CROSS_WIRING,
    mask_self=None,
    mask_other=None,
) -> Tensor:
    x_self = T.as_tensor(x_self)
    attended = params.attn(x_self, x_other, wiring, mask_self, mask_other)
    a = params.norm1(T.add(x_self, attended))
    return params.norm2(T.add(a, params.sublayer(a, mask_self)))


def block_stack(
    x_self,
    x_other,
    blocks: Sequence[CrossAttentionBlock],
    wiring: AttentionWiring = CROSS_WIRING,
    mask_self=None,
    mask_other=None,
) -> Tensor:
    """Apply blocks in order; every block sees the same ``x_other``."""
    if not blocks:
        raise EmptyStack("block_stack needs at least one block")
    h = T.as_tensor(x_self)
    for block in blocks:
        h = cross_attention_block(h, x_other, block, wiring, mask_self, mask_other)
    return h


def layered_block_stack(
    x_a,
    x_b,
    blocks: Sequence[CrossAttentionBlock],
    wiring: AttentionWiring = CROSS_WIRING,
    mask_a=None,
    mask_b=None,
) -> tuple[Tensor, Tensor]:
    """Lockstep variant: at depth i each branch attends to the other's depth-i state."""
    if not blocks:
        raise EmptyStack("block_stack needs at least one block")
    a, b = T.as_tensor(x_a), T.as_tensor(x_b)
    for block in blocks:
        a, b = (
            cross_attention_block(a, b, block, wiring, mask_a, mask_b),
            cross_attention_block(b, a, block, wiring, mask_b, mask_a),
        )
    return a, b
