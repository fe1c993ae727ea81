"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"CATS"  u32 version
    u64 metadata length, metadata bytes (UTF-8 JSON: config, vocab, seed, optimizer scalars)
    u32 tensor count
    per tensor: u32 name length, name bytes, u32 rank, rank x u64 extents, raw float64 data
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, BinaryIO

import numpy as np

from .embedding import Vocabulary
from .errors import CorruptFile, VersionMismatch
from .model import ModelConfig

MAGIC = b"CATS"
VERSION = 1
_OPT_M, _OPT_V = "optimizer.m.", "optimizer.v."


@dataclass
class Checkpoint:
    config: ModelConfig
    vocab: Vocabulary
    params: dict[str, np.ndarray]
    optimizer: dict[str, Any] | None = None
    seed: int | None = None
    extra: dict[str, Any] = field(default_factory=dict)
    version: int = VERSION


def _write_tensor(fh: BinaryIO, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    tensors = dict(ckpt.params)
    meta: dict[str, Any] = {
        "config": ckpt.config.to_dict(),
        "vocab": ckpt.vocab.id_to_token,
        "seed": ckpt.seed,
        "extra": ckpt.extra,
        "optimizer": None,
    }
    if ckpt.optimizer is not None:
        opt = ckpt.optimizer
        meta["optimizer"] = {k: opt[k] for k in ("step", "lr", "betas", "eps")}
        tensors.update({_OPT_M + k: v for k, v in opt["m"].items()})
        tensors.update({_OPT_V + k: v for k, v in opt["v"].items()})
    blob = json.dumps(meta, ensure_ascii=False, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            _write_tensor(fh, name, np.asarray(arr))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise CorruptFile(f"unexpected end of file at byte {self.pos} (wanted {n} more)")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if len(r.buf) < 4 or r.take(4) != MAGIC:
        raise CorruptFile(f"{path}: not a catsnet checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise VersionMismatch(f"{path}: checkpoint version {version}, this build reads {VERSION}")
    (meta_len,) = r.unpack("<Q")
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"{path}: metadata block unreadable ({exc})") from None
    if not isinstance(meta, dict):
        raise CorruptFile(f"{path}: metadata must be a JSON object")
    (count,) = r.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<I")
        try:
            name = r.take(name_len).decode("utf-8")
        except UnicodeDecodeError:
            raise CorruptFile(f"{path}: tensor name is not UTF-8") from None
        (rank,) = r.unpack("<I")
        if rank > 8:
            raise CorruptFile(f"{path}: implausible tensor rank {rank}")
        shape = r.unpack(f"<{rank}Q")
        n = math.prod(shape)
        tensors[name] = np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
    if r.pos != len(r.buf):
        raise CorruptFile(f"{path}: {len(r.buf) - r.pos} trailing bytes")

    try:
        config = ModelConfig.from_dict(meta["config"])
        vocab = Vocabulary.from_id_list(meta["vocab"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptFile(f"{path}: invalid metadata ({exc})") from None

    optimizer = None
    if meta.get("optimizer") is not None:
        try:
            optimizer = dict(meta["optimizer"])
        except (TypeError, ValueError):
            raise CorruptFile(f"{path}: invalid optimizer metadata") from None
        optimizer["m"] = {k[len(_OPT_M):]: tensors.pop(k) for k in list(tensors) if k.startswith(_OPT_M)}
        optimizer["v"] = {k[len(_OPT_V):]: tensors.pop(k) for k in list(tensors) if k.startswith(_OPT_V)}
    return Checkpoint(config, vocab, tensors, optimizer, meta.get("seed"), meta.get("extra", {}), version)
