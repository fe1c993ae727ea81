"""Scaled dot-product attention and multi-head attention with configurable Q/K/V sources."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import AllMasked, ConfigError, ShapeMismatch, WiringInvalid
from .nn import Module, uniform
from .tensor import Tensor

MASK_VALUE = -1e9


class Source(str, enum.Enum):
    SELF = "self"
    OTHER = "other"


@dataclass(frozen=True)
class AttentionWiring:
    """Which of the two input sequences feeds each projection."""

    q_source: Source = Source.SELF
    k_source: Source = Source.OTHER
    v_source: Source = Source.OTHER

    def __post_init__(self):
        for field in ("q_source", "k_source", "v_source"):
            object.__setattr__(self, field, Source(getattr(self, field)))

    def validate(self) -> None:
        # keys and values must have the same length for softmax(QK^T)V
        if self.k_source != self.v_source:
            raise WiringInvalid(f"k_source ({self.k_source.value}) must equal v_source ({self.v_source.value})")

    @classmethod
    def parse(cls, text: str) -> AttentionWiring:
        """Parse ``"self,other,other"`` (q,k,v order)."""
        parts = [p.strip().lower() for p in text.split(",")]
        if len(parts) != 3:
            raise ConfigError(f"wiring needs three comma-separated sources, got {text!r}")
        try:
            return cls(*parts)
        except ValueError:
            raise ConfigError(f"unknown source in wiring {text!r}") from None

    def __str__(self) -> str:
        return f"{self.q_source.value},{self.k_source.value},{self.v_source.value}"


SELF_WIRING = AttentionWiring(Source.SELF, Source.SELF, Source.SELF)
CROSS_WIRING = AttentionWiring(Source.SELF, Source.OTHER, Source.OTHER)


def scaled_dot_attention(Q, K, V, key_mask=None, return_weights: bool = False):
    """softmax(Q K^T / sqrt(d_k)) V over valid keys.

    ``Q`` is ``[b, ..., n_q, d_k]``, ``K``/``V`` are ``[b, ..., n_k, d_k]`` and
    ``key_mask`` is a boolean ``[b, n_k]`` marking real (non-PAD) key positions.
    """
    Q, K, V = T.as_tensor(Q), T.as_tensor(K), T.as_tensor(V)
    if K.shape[-2] != V.shape[-2]:
        raise ShapeMismatch(f"K and V lengths differ: {K.shape} vs {V.shape}")
    if Q.shape[-1] != K.shape[-1]:
        raise ShapeMismatch(f"Q and K widths differ: {Q.shape} vs {K.shape}")
    d_k = Q.shape[-1]
    scores = T.scale(T.matmul(Q, T.transpose(K)), 1.0 / np.sqrt(d_k))
    if key_mask is not None:
        key_mask = np.asarray(key_mask, dtype=bool)
        if key_mask.shape != (K.shape[0], K.shape[-2]):
            raise ShapeMismatch(f"key_mask {key_mask.shape} does not match keys {K.shape}")
        if not key_mask.any(axis=1).all():
            raise AllMasked("a batch row has no valid key positions")
        # [b, n_k] -> [b, 1.., 1, n_k]
        invalid = ~key_mask.reshape(key_mask.shape[:1] + (1,) * (scores.ndim - 2) + key_mask.shape[1:])
        scores = T.masked_fill(scores, np.broadcast_to(invalid, scores.shape), MASK_VALUE)
    weights = T.softmax(scores, axis=-1)
    out = T.matmul(weights, V)
    return (out, weights) if return_weights else out


class MultiHeadAttention(Module):
    """Head ``h`` owns columns ``h*d_k:(h+1)*d_k`` of ``w_q``, ``w_k`` and ``w_v``."""

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator):
        if n_heads < 1 or d_model % n_heads:
            raise ConfigError(f"n_heads ({n_heads}) must divide d_model ({d_model})")
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_k = d_model // n_heads
        self.w_q = uniform(rng, (d_model, d_model), d_model)
        self.w_k = uniform(rng, (d_model, d_model), d_model)
        self.w_v = uniform(rng, (d_model, d_model), d_model)
        self.w_o = uniform(rng, (d_model, d_model), d_model)

    def __call__(self, x_self, x_other, wiring=CROSS_WIRING, mask_self=None, mask_other=None):
        return multi_head_cross_attention(x_self, x_other, self, wiring, mask_self, mask_other)


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, n, d = x.shape
    return T.permute(T.reshape(x, (b, n, n_heads, d // n_heads)), (0, 2, 1, 3))


def multi_head_cross_attention(
    x_self,
    x_other,
    params: MultiHeadAttention,
    wiring: AttentionWiring = CROSS_WIRING,
    mask_self=None,
    mask_other=None,
) -> Tensor:
    """Project the wired sources, attend per head, concatenate heads, apply ``w_o``.

    The output length is that of the query source.
    """
    wiring.validate()
    x_self, x_other = T.as_tensor(x_self), T.as_tensor(x_other)
    for x in (x_self, x_other):
        if x.ndim != 3 or x.shape[-1] != params.d_model:
            raise ShapeMismatch(f"expected [b, n, {params.d_model}] input, got {x.shape}")
    if x_self.shape[0] != x_other.shape[0]:
        raise ShapeMismatch(f"batch sizes differ: {x_self.shape[0]} vs {x_other.shape[0]}")

    sources = {Source.SELF: (x_self, mask_self), Source.OTHER: (x_other, mask_other)}
    xq, _ = sources[wiring.q_source]
    xk, key_mask = sources[wiring.k_source]
    xv, _ = sources[wiring.v_source]
    if key_mask is None:
        key_mask = np.ones(xk.shape[:2], dtype=bool)

    h = params.n_heads
    q = _split_heads(T.matmul(xq, params.w_q), h)
    k = _split_heads(T.matmul(xk, params.w_k), h)
    v = _split_heads(T.matmul(xv, params.w_v), h)
    heads = scaled_dot_attention(q, k, v, key_mask)  # [b, h, n_q, d_k]
    b, _, n_q, _ = heads.shape
    merged = T.reshape(T.permute(heads, (0, 2, 1, 3)), (b, n_q, params.d_model))
    return T.matmul(merged, params.w_o)
