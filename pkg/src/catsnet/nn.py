"""Parameter containers: a minimal module tree with hierarchical names."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ShapeMismatch
from .tensor import Tensor


def uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    k = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-k, k, size=shape), requires_grad=True)


class Module:
    """Walks attributes in definition order to find parameters and submodules.

    Every ``Tensor`` attribute is state; those with ``requires_grad`` are also
    parameters the optimizer updates. Lists of modules are indexed
    (``blocks.0.attn.w_q``). A tensor reachable under two names is reported
    once, under the first.
    """

    def named_tensors(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        """Every tensor attribute, trainable or frozen."""
        seen: set[int] = set()
        for name, t in self._walk(prefix):
            if id(t) not in seen:
                seen.add(id(t))
                yield name, t

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        """Trainable tensors only."""
        return ((n, t) for n, t in self.named_tensors(prefix) if t.requires_grad)

    def _walk(self, prefix: str):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                yield name, value
            elif isinstance(value, Module):
                yield from value._walk(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item._walk(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_tensors()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_tensors())
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ShapeMismatch(f"{name}: expected {p.shape}, got {value.shape}")
            p.data[...] = value


def count_parameters(module: Module) -> int:
    """Number of scalars across unique tensors (frozen embeddings included)."""
    return int(np.sum([t.size for _, t in module.named_tensors()], dtype=np.int64))


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.weight = uniform(rng, (d_in, d_out), d_in)
        self.bias = uniform(rng, (d_out,), d_in)

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.weight), self.bias)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gain = Tensor(np.ones(d), requires_grad=True)
        self.bias = Tensor(np.zeros(d), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, self.eps)
