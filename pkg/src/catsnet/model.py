"""Siamese assembly: shared embedding and block stack, swapped roles per branch, MLP head."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from typing import Any

import numpy as np

from . import tensor as T
from .attention import SELF_WIRING, AttentionWiring
from .blocks import BILSTM, MLP, CrossAttentionBlock, block_stack, layered_block_stack
from .embedding import EmbeddingTable
from .errors import ConfigError, EmptySentence, ShapeMismatch, WiringInvalid
from .nn import Linear, Module
from .tensor import Tensor

MEAN, MAX = "mean", "max"
RAW, LAYERED = "raw", "layered"
SELF, CROSS = "self", "cross"


@dataclass
class ModelConfig:
    d_model: int = 300
    n_heads: int = 6
    n_blocks: int = 3
    sublayer_variant: str = BILSTM
    attention_mode: str = CROSS
    wiring: str = "self,other,other"
    max_len: int = 50
    pooling: str = MEAN
    head_hidden: int = 128
    cross_depth: str = RAW
    positional_encoding: bool = False
    d_ff: int = 0  # 0 -> 4 * d_model
    norm_eps: float = 1e-5
    trainable_embeddings: bool = True
    attention_dropout: float = 0.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.d_model < 1 or self.n_heads < 1 or self.d_model % self.n_heads:
            raise ConfigError(f"n_heads ({self.n_heads}) must divide d_model ({self.d_model})")
        if self.n_blocks < 1:
            raise ConfigError("n_blocks must be >= 1")
        if self.max_len < 1 or self.head_hidden < 1 or self.d_ff < 0:
            raise ConfigError("max_len and head_hidden must be positive, d_ff non-negative")
        choices = {
            "sublayer_variant": (MLP, BILSTM),
            "attention_mode": (SELF, CROSS),
            "pooling": (MEAN, MAX),
            "cross_depth": (RAW, LAYERED),
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if self.sublayer_variant == BILSTM and self.d_model % 2:
            raise ConfigError("the Bi-LSTM sublayer needs an even d_model")
        if self.attention_dropout != 0.0:
            raise ConfigError("attention dropout is not supported; leave attention_dropout at 0")
        try:
            self.attention_wiring().validate()
        except WiringInvalid as exc:
            raise ConfigError(str(exc)) from None

    def attention_wiring(self) -> AttentionWiring:
        if self.attention_mode == SELF:
            return SELF_WIRING
        return AttentionWiring.parse(self.wiring)

    def replace(self, **changes) -> ModelConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


# the three ablation variants; the last one is the full CATsNet
VARIANTS: dict[str, dict[str, str]] = {
    "self-attention": {"attention_mode": SELF, "sublayer_variant": MLP},
    "cross-mlp": {"attention_mode": CROSS, "sublayer_variant": MLP},
    "catsnet": {"attention_mode": CROSS, "sublayer_variant": BILSTM},
}


def sinusoidal_encoding(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


@dataclass
class SiameseOutput:
    pooled_a: Tensor
    pooled_b: Tensor
    logits: Tensor
    probabilities: Tensor = field(repr=False)


def masked_pool(h: Tensor, mask: np.ndarray, how: str = MEAN) -> Tensor:
    """Reduce ``[b, n, d]`` to ``[b, d]`` over valid positions only."""
    mask = np.asarray(mask, dtype=bool)
    if how == MEAN:
        m = mask[:, :, None].astype(np.float64)
        counts = m.sum(axis=1)
        return T.div(T.sum(T.mul(h, m), axis=1), counts)
    if how == MAX:
        filled = T.masked_fill(h, np.broadcast_to(~mask[:, :, None], h.shape), -1e9)
        return T.max(filled, axis=1)
    raise ConfigError(f"unknown pooling {how!r}")


class CATsNet(Module):
    """Both branches call the same ``embedding``, ``blocks`` and head objects."""

    def __init__(
        self,
        config: ModelConfig,
        vocab_size: int | None = None,
        seed: int = 0,
        embedding: EmbeddingTable | None = None,
    ):
        rng = np.random.default_rng(seed)
        if embedding is None:
            if vocab_size is None:
                raise ConfigError("either vocab_size or a pretrained embedding table is required")
            embedding = EmbeddingTable.random(vocab_size, config.d_model, rng, config.trainable_embeddings)
        elif embedding.d_emb != config.d_model:
            raise ConfigError(f"embedding width {embedding.d_emb} != d_model {config.d_model}")
        self.config = config
        self.embedding = embedding
        self.blocks = [
            CrossAttentionBlock(
                config.d_model,
                config.n_heads,
                config.sublayer_variant,
                rng,
                d_ff=config.d_ff or None,
                norm_eps=config.norm_eps,
            )
            for _ in range(config.n_blocks)
        ]
        self.head_hidden = Linear(2 * config.d_model, config.head_hidden, rng)
        self.head_out = Linear(config.head_hidden, 2, rng)

    def _embed(self, ids: np.ndarray) -> Tensor:
        x = self.embedding(ids)
        if self.config.positional_encoding:
            x = T.add(x, sinusoidal_encoding(ids.shape[1], self.config.d_model))
        return x

    def encode(self, ids_a, mask_a, ids_b, mask_b) -> tuple[Tensor, Tensor]:
        """Run both branches and return pooled ``[b, d_model]`` vectors."""
        cfg = self.config
        ids_a, ids_b = np.asarray(ids_a, dtype=np.int64), np.asarray(ids_b, dtype=np.int64)
        mask_a = np.asarray(mask_a, dtype=bool)
        mask_b = np.asarray(mask_b, dtype=bool)
        if ids_a.shape != mask_a.shape or ids_b.shape != mask_b.shape or ids_a.shape[0] != ids_b.shape[0]:
            raise ShapeMismatch("ids/mask shapes disagree")
        if not (mask_a.any(axis=1).all() and mask_b.any(axis=1).all()):
            raise EmptySentence("every sentence needs at least one token")
        wiring = cfg.attention_wiring()
        xa, xb = self._embed(ids_a), self._embed(ids_b)
        if cfg.cross_depth == LAYERED:
            ha, hb = layered_block_stack(xa, xb, self.blocks, wiring, mask_a, mask_b)
        else:
            ha = block_stack(xa, xb, self.blocks, wiring, mask_a, mask_b)
            hb = block_stack(xb, xa, self.blocks, wiring, mask_b, mask_a)
        return masked_pool(ha, mask_a, cfg.pooling), masked_pool(hb, mask_b, cfg.pooling)

    def forward(self, batch) -> SiameseOutput:
        pooled_a, pooled_b = self.encode(batch.ids_a, batch.mask_a, batch.ids_b, batch.mask_b)
        hidden = T.relu(self.head_hidden(T.concat_last_axis(pooled_a, pooled_b)))
        logits = self.head_out(hidden)
        return SiameseOutput(pooled_a, pooled_b, logits, T.softmax(logits, axis=-1))

    __call__ = forward


def predict_from_probabilities(probabilities, threshold: float = 0.5) -> np.ndarray:
    """Class 1 iff P(similar) >= threshold (ties go to 1)."""
    p = probabilities.data if isinstance(probabilities, Tensor) else np.asarray(probabilities)
    return (p[:, 1] >= threshold).astype(np.int64)


def predict(model: CATsNet, batch, threshold: float = 0.5) -> np.ndarray:
    with T.no_grad():
        out = model(batch)
    return predict_from_probabilities(out.probabilities, threshold)
