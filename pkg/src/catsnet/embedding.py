"""Character vocabulary, embedding table and the word2vec text loader."""

from __future__ import annotations

from collections import Counter
from pathlib import Path
from typing import Iterable

import numpy as np

from . import tensor as T
from .errors import DuplicateToken, EmptyFile, IdOutOfRange, ParseError
from .nn import Module
from .tensor import Tensor

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
RANDOM_INIT_STD = 0.1


class Vocabulary:
    """Injective token -> id map with PAD=0 and UNK=1 always reserved."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.id_to_token: list[str] = [PAD_TOKEN, UNK_TOKEN]
        self.token_to_id: dict[str, int] = {PAD_TOKEN: PAD, UNK_TOKEN: UNK}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token not in self.token_to_id:
            self.token_to_id[token] = len(self.id_to_token)
            self.id_to_token.append(token)
        return self.token_to_id[token]

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def __len__(self) -> int:
        return self.size

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.id_to_token == other.id_to_token

    def get(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    @classmethod
    def from_id_list(cls, id_to_token: list[str]) -> Vocabulary:
        if id_to_token[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise ParseError("vocabulary must start with the reserved PAD and UNK tokens")
        vocab = cls(id_to_token[2:])
        if vocab.size != len(id_to_token):
            raise DuplicateToken("vocabulary list contains duplicates")
        return vocab

    @classmethod
    def build(cls, sentences: Iterable[str], min_count: int = 1) -> Vocabulary:
        """Characters ordered by descending frequency, ties by code point."""
        counts = Counter(ch for s in sentences for ch in s)
        ranked = sorted((c for c, n in counts.items() if n >= min_count), key=lambda c: (-counts[c], c))
        return cls(ranked)


def tokenize(sentence: str, vocab: Vocabulary) -> list[int]:
    """One id per Unicode scalar; unknown characters map to UNK."""
    return [vocab.get(ch) for ch in sentence]


class EmbeddingTable(Module):
    def __init__(self, weights: np.ndarray, trainable: bool = True):
        weights = np.array(weights, dtype=np.float64)
        weights[PAD] = 0.0
        self.weights = Tensor(weights, requires_grad=trainable)

    @property
    def vocab_size(self) -> int:
        return self.weights.shape[0]

    @property
    def d_emb(self) -> int:
        return self.weights.shape[1]

    @property
    def trainable(self) -> bool:
        return self.weights.requires_grad

    @classmethod
    def random(cls, vocab_size: int, d_emb: int, rng: np.random.Generator, trainable: bool = True):
        return cls(rng.normal(0.0, RANDOM_INIT_STD, size=(vocab_size, d_emb)), trainable)

    def __call__(self, ids) -> Tensor:
        return embed(ids, self)


def embed(ids, table: EmbeddingTable) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.vocab_size):
        raise IdOutOfRange(f"ids must lie in [0, {table.vocab_size})")
    return T.embedding_lookup(table.weights, ids, pad_id=PAD)


def load_pretrained(
    path: str | Path,
    vocab: Vocabulary | None = None,
    rng: np.random.Generator | None = None,
    trainable: bool = True,
) -> tuple[Vocabulary, EmbeddingTable]:
    """Read word2vec text format: a ``count dim`` header, then ``token v1 .. vdim``.

    Tokens of a supplied ``vocab`` keep their ids; those absent from the file
    are drawn from N(0, 0.1^2). File tokens not in ``vocab`` are appended.
    UNK becomes the mean of all loaded vectors and PAD is zero.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not valid UTF-8 at byte {exc.start}") from None
    lines = [ln.rstrip("\r") for ln in text.split("\n")]
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise EmptyFile(f"{path}: no content")
    header = lines[0].split()
    try:
        count, dim = (int(v) for v in header)
    except ValueError:
        raise ParseError(f"{path}: line 1: expected header 'count dim', got {lines[0]!r}") from None
    if dim < 1:
        raise ParseError(f"{path}: line 1: dimension must be positive")
    if count == 0 or len(lines) == 1:
        raise EmptyFile(f"{path}: no vectors")
    if len(lines) - 1 != count:
        raise ParseError(f"{path}: header announces {count} vectors, found {len(lines) - 1}")

    loaded: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.rstrip().split(" ")
        token, values = parts[0], parts[1:]
        if len(values) != dim:
            raise ParseError(f"{path}: line {lineno}: expected {dim} values, got {len(values)}")
        if token in loaded or token in (PAD_TOKEN, UNK_TOKEN):
            raise DuplicateToken(f"{path}: line {lineno}: duplicate token {token!r}")
        try:
            loaded[token] = np.array([float(v) for v in values])
        except ValueError:
            raise ParseError(f"{path}: line {lineno}: non-numeric value") from None

    vocab = Vocabulary(vocab.id_to_token[2:] if vocab is not None else ())
    for token in loaded:
        vocab.add(token)
    weights = rng.normal(0.0, RANDOM_INIT_STD, size=(vocab.size, dim))
    for token, vec in loaded.items():
        weights[vocab.token_to_id[token]] = vec
    weights[UNK] = np.mean(np.stack(list(loaded.values())), axis=0)
    return vocab, EmbeddingTable(weights, trainable=trainable)
