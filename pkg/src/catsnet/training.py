"""Focal loss, Adam, the epoch loop and accuracy evaluation."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .data import TokenizedPair, iterate_batches
from .errors import ConfigError, EmptyDataset, LabelOutOfRange
from .model import CATsNet, predict_from_probabilities
from .tensor import Tensor

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
METRICS_HEADER = ("epoch", "split", "loss", "accuracy", "wall_seconds")


@dataclass(frozen=True)
class FocalLossConfig:
    """``alpha`` weights class 1; class 0 gets ``1 - alpha`` when ``balanced``, else ``alpha`` too."""

    alpha: float = 0.25
    gamma: float = 2.0
    balanced: bool = True

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")

    def class_weights(self) -> np.ndarray:
        return np.array([1.0 - self.alpha if self.balanced else self.alpha, self.alpha])


def focal_loss(probabilities: Tensor, labels, cfg: FocalLossConfig = FocalLossConfig()) -> Tensor:
    """Batch mean of ``-alpha_t * (1 - p_t)^gamma * log(p_t)``."""
    labels = np.asarray(labels, dtype=np.int64)
    b = probabilities.shape[0]
    if labels.shape != (b,):
        raise LabelOutOfRange(f"expected {b} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() > 1):
        raise LabelOutOfRange("labels must be 0 or 1")
    p_t = T.clamp_min(probabilities[np.arange(b), labels], PROB_FLOOR)
    alpha_t = cfg.class_weights()[labels]
    modulator = T.power(T.sub(1.0, p_t), cfg.gamma)
    per_item = T.mul(T.mul(modulator, T.log(p_t)), -alpha_t)
    return T.mean(per_item)


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    alpha: float = 0.25
    gamma: float = 2.0
    balanced: bool = True
    threshold: float = 0.5

    def focal(self) -> FocalLossConfig:
        return FocalLossConfig(self.alpha, self.gamma, self.balanced)

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}


class Adam:
    """Adaptive-moment optimizer with bias correction; state is keyed by parameter name."""

    def __init__(self, named_params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params: list[tuple[str, Tensor]] = list(named_params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self) -> None:
        self.step_count += 1
        c1 = 1.0 - self.beta1**self.step_count
        c2 = 1.0 - self.beta2**self.step_count
        for name, p in self.params:
            if p.grad is None:
                continue
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def state_dict(self) -> dict:
        return {
            "step": self.step_count,
            "lr": self.lr,
            "betas": [self.beta1, self.beta2],
            "eps": self.eps,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.step_count = int(state["step"])
        self.lr = float(state["lr"])
        self.beta1, self.beta2 = state["betas"]
        self.eps = float(state["eps"])
        for name, _ in self.params:
            self.m[name][...] = state["m"][name]
            self.v[name][...] = state["v"][name]


@dataclass
class MetricsRow:
    epoch: int
    split: str
    loss: float
    accuracy: float
    wall_seconds: float


def write_metrics_csv(path: str | Path, rows: Sequence[MetricsRow], timing: bool = True) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for r in rows:
            wall = f"{r.wall_seconds:.3f}" if timing else "0.000"
            writer.writerow([r.epoch, r.split, repr(r.loss), repr(r.accuracy), wall])


def read_metrics_csv(path: str | Path) -> list[MetricsRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [
            MetricsRow(int(r["epoch"]), r["split"], float(r["loss"]), float(r["accuracy"]), float(r["wall_seconds"]))
            for r in reader
        ]


def evaluate_split(
    model: CATsNet,
    pairs: Sequence[TokenizedPair],
    batch_size: int = 64,
    threshold: float = 0.5,
    loss_cfg: FocalLossConfig = FocalLossConfig(),
) -> tuple[float, float]:
    """(mean focal loss, accuracy) without recording a graph."""
    if not pairs:
        raise EmptyDataset("cannot evaluate an empty dataset")
    correct = 0
    loss_sum = 0.0
    with T.no_grad():
        for batch in iterate_batches(pairs, batch_size):
            out = model(batch)
            loss_sum += focal_loss(out.probabilities, batch.labels, loss_cfg).item() * len(batch)
            correct += int(np.sum(predict_from_probabilities(out.probabilities, threshold) == batch.labels))
    return loss_sum / len(pairs), correct / len(pairs)


def evaluate(model: CATsNet, pairs: Sequence[TokenizedPair], batch_size: int = 64, threshold: float = 0.5) -> float:
    """Fraction of pairs whose predicted label matches."""
    return evaluate_split(model, pairs, batch_size, threshold)[1]


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    metrics: list[MetricsRow]
    best_epoch: int | None
    best_accuracy: float | None
    optimizer: Adam

    def as_dict(self) -> dict:
        return {"metrics": [asdict(r) for r in self.metrics], "best_epoch": self.best_epoch}


def train(
    model: CATsNet,
    train_pairs: Sequence[TokenizedPair],
    valid_pairs: Sequence[TokenizedPair] | None = None,
    cfg: TrainConfig = TrainConfig(),
    seed: int = 0,
    on_epoch: Callable[[int, list[MetricsRow]], None] | None = None,
) -> TrainResult:
    """Run ``cfg.epochs`` epochs of Adam on the focal loss.

    Each epoch yields a ``train`` row (running loss/accuracy over the epoch's
    batches) and, when ``valid_pairs`` is given, a ``validation`` row. The
    model ends holding the parameters of the best validation epoch (earliest
    on ties), or of the final epoch without a validation split.
    """
    if not train_pairs:
        raise EmptyDataset("training split is empty")
    rng = np.random.default_rng(seed)
    loss_cfg = cfg.focal()
    opt = Adam(model.named_parameters(), cfg.lr, (cfg.beta1, cfg.beta2), cfg.eps)
    metrics: list[MetricsRow] = []
    best_state = model.state_dict()
    best_epoch: int | None = None
    best_acc: float | None = None

    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        loss_sum, correct = 0.0, 0
        for batch in iterate_batches(train_pairs, cfg.batch_size, rng):
            out = model(batch)
            loss = focal_loss(out.probabilities, batch.labels, loss_cfg)
            loss.backward()
            opt.step()
            opt.zero_grad()
            loss_sum += loss.item() * len(batch)
            correct += int(np.sum(predict_from_probabilities(out.probabilities, cfg.threshold) == batch.labels))
        rows = [MetricsRow(epoch, "train", loss_sum / len(train_pairs), correct / len(train_pairs),
                           time.perf_counter() - start)]
        if valid_pairs:
            vstart = time.perf_counter()
            v_loss, v_acc = evaluate_split(model, valid_pairs, cfg.batch_size, cfg.threshold, loss_cfg)
            rows.append(MetricsRow(epoch, "validation", v_loss, v_acc, time.perf_counter() - vstart))
            if best_acc is None or v_acc > best_acc:
                best_acc, best_epoch, best_state = v_acc, epoch, model.state_dict()
        else:
            best_epoch, best_state = epoch, model.state_dict()
        metrics.extend(rows)
        for r in rows:
            log.info("epoch %d %s loss=%.4f acc=%.4f (%.1fs)", r.epoch, r.split, r.loss, r.accuracy, r.wall_seconds)
        if on_epoch is not None:
            on_epoch(epoch, rows)

    model.load_state_dict(best_state)
    return TrainResult(best_state, metrics, best_epoch, best_acc, opt)
