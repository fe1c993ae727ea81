"""LCQMC-style TSV ingestion, tokenized pairs and right-padded batches."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .embedding import PAD, Vocabulary, tokenize
from .errors import BadLabel, ConfigError, EmptyAfterTokenization, MalformedLine


class Record(NamedTuple):
    sentence_a: str
    sentence_b: str
    label: int


def load_lcqmc(path: str | Path) -> list[Record]:
    """Parse ``sentence_a<TAB>sentence_b<TAB>label`` lines.

    A first line whose third field is not 0/1 is taken as a header and skipped.
    Blank lines are ignored; a leading byte-order mark is dropped.
    """
    records: list[Record] = []
    with open(path, "rb") as fh:
        for lineno, raw in enumerate(fh, start=1):
            try:
                line = raw.decode("utf-8-sig" if lineno == 1 else "utf-8").rstrip("\r\n")
            except UnicodeDecodeError as exc:
                raise MalformedLine(lineno, f"not valid UTF-8 ({exc.reason})") from None
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise MalformedLine(lineno, f"expected 3 tab-separated fields, got {len(parts)}")
            a, b, label = parts
            label = label.strip()
            if label not in ("0", "1"):
                if lineno == 1:
                    continue
                raise BadLabel(lineno, f"label must be 0 or 1, got {label!r}")
            records.append(Record(a, b, int(label)))
    return records


def write_lcqmc(path: str | Path, records: Sequence[Record]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for a, b, label in records:
            fh.write(f"{a}\t{b}\t{label}\n")


@dataclass
class TokenizedPair:
    ids_a: list[int]
    ids_b: list[int]
    label: int

    @property
    def mask_a(self) -> list[bool]:
        return [True] * len(self.ids_a)

    @property
    def mask_b(self) -> list[bool]:
        return [True] * len(self.ids_b)


@dataclass
class PairBatch:
    """Right-padded id matrices and their validity masks."""

    ids_a: np.ndarray
    mask_a: np.ndarray
    ids_b: np.ndarray
    mask_b: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


def encode(records: Sequence[Record], vocab: Vocabulary, max_len: int) -> list[TokenizedPair]:
    """Tokenize and right-truncate both sides to ``max_len``."""
    pairs = []
    for i, (a, b, label) in enumerate(records):
        ids_a, ids_b = tokenize(a, vocab)[:max_len], tokenize(b, vocab)[:max_len]
        if not ids_a or not ids_b:
            raise EmptyAfterTokenization(f"record {i}: empty sentence")
        pairs.append(TokenizedPair(ids_a, ids_b, int(label)))
    return pairs


def _pad(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), PAD, dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=bool)
    for row, s in enumerate(seqs):
        ids[row, : len(s)] = s
        mask[row, : len(s)] = True
    return ids, mask


def collate(pairs: Sequence[TokenizedPair]) -> PairBatch:
    """Pad each side to its own batch-local maximum length."""
    ids_a, mask_a = _pad([p.ids_a for p in pairs])
    ids_b, mask_b = _pad([p.ids_b for p in pairs])
    labels = np.array([p.label for p in pairs], dtype=np.int64)
    return PairBatch(ids_a, mask_a, ids_b, mask_b, labels)


def iterate_batches(
    pairs: Sequence[TokenizedPair],
    batch_size: int,
    rng: np.random.Generator | None = None,
) -> Iterator[PairBatch]:
    """Batches in order, or permuted by ``rng``; the last partial batch is kept."""
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    order = np.arange(len(pairs)) if rng is None else rng.permutation(len(pairs))
    for start in range(0, len(pairs), batch_size):
        yield collate([pairs[i] for i in order[start : start + batch_size]])


def make_batches(
    records: Sequence[Record],
    vocab: Vocabulary,
    batch_size: int,
    max_len: int,
    seed: int = 0,
    shuffle: bool = False,
) -> Iterator[PairBatch]:
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    pairs = encode(records, vocab, max_len)
    rng = np.random.default_rng(seed) if shuffle else None
    return iterate_batches(pairs, batch_size, rng)
