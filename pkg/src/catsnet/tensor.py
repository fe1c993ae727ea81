"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every op in this module takes :class:`Tensor` (or array-like constants),
computes its result eagerly with numpy and, when gradient recording is
enabled and an input requires a gradient, records a backward rule on the
output. ``Tensor.backward`` replays the recorded nodes in exact reverse
creation order, accumulating gradients into leaves with ``+=`` so that a
parameter used twice (e.g. by both siamese branches) sums both
contributions.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DomainError, NotScalar, ShapeMismatch

DTYPE = np.float64

_seq = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation, finite differences)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq", "op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._seq = next(_seq)
        self.op = "leaf"

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        if self.data.size != 1:
            raise NotScalar(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self.op})"

    # -- differentiation -----------------------------------------------
    def backward(self) -> None:
        """Back-propagate from this scalar through the recorded graph."""
        if self.data.size != 1:
            raise NotScalar(f"backward() needs a scalar loss, got shape {self.shape}")
        nodes = graph_nodes(self)
        pending: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(nodes):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            node.grad = g
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.is_leaf:
                    parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
                else:
                    key = id(parent)
                    pending[key] = pg if key not in pending else pending[key] + pg

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)


def graph_nodes(root: Tensor) -> list[Tensor]:
    """Non-leaf tensors reachable from ``root``, in forward execution order."""
    seen: set[int] = set()
    out: list[Tensor] = []
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in seen or t.is_leaf:
            continue
        seen.add(id(t))
        out.append(t)
        stack.extend(p for p in t._parents if p.requires_grad)
    out.sort(key=lambda t: t._seq)
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._seq = next(_seq)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise arithmetic ---------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    if np.any(b.data == 0):
        raise DomainError("div: zero divisor")

    def backward(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return _result(a.data / b.data, (a, b), backward, "div")


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return _result(x.data * c, (x,), lambda g: (g * c,), "scale")


def power(x, exponent: float) -> Tensor:
    x = as_tensor(x)
    p = float(exponent)
    out = np.power(x.data, p)

    def backward(g):
        if p == 0.0:
            return (np.zeros_like(g),)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = p * np.power(x.data, p - 1.0)
        # subgradient 0 where the derivative blows up at the origin
        d = np.where(np.isfinite(d), d, 0.0)
        return (g * d,)

    return _result(out, (x,), backward, "power")


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _result(out, (x,), lambda g: (g * out,), "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log: input must be strictly positive")
    return _result(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # split by sign so neither branch overflows
    z = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _result(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(x) -> Tensor:
    x = as_tensor(x)
    on = x.data > 0
    return _result(np.where(on, x.data, 0.0), (x,), lambda g: (g * on,), "relu")


def clamp_min(x, floor: float) -> Tensor:
    x = as_tensor(x)
    keep = x.data >= floor
    return _result(np.maximum(x.data, floor), (x,), lambda g: (g * keep,), "clamp_min")


def masked_fill(x, mask, value: float) -> Tensor:
    """Replace entries where ``mask`` is true with ``value`` (no gradient flows there)."""
    x = as_tensor(x)
    mask = np.asarray(mask, dtype=bool)
    try:
        out = np.where(mask, value, x.data)
    except ValueError:
        raise ShapeMismatch(f"masked_fill: mask {mask.shape} vs {x.shape}") from None
    if out.shape != x.shape:
        raise ShapeMismatch(f"masked_fill: mask {mask.shape} broadcasts beyond {x.shape}")
    return _result(out, (x,), lambda g: (np.where(mask, 0.0, g),), "masked_fill")


# -- reductions ---------------------------------------------------------

def sum(x, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(np.asarray(out, dtype=DTYPE).reshape(np.shape(out) or (1,)), (x,), backward, "sum")


def mean(x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.size if axis is None else x.shape[axis]
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


mean_over_axis = mean


def max(x, axis: int, keepdims: bool = False) -> Tensor:  # noqa: A001
    """Max along ``axis``; the gradient goes to the first maximal entry."""
    x = as_tensor(x)
    idx = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def backward(g):
        gx = np.zeros_like(x.data)
        gk = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(gx, np.expand_dims(idx, axis), gk, axis=axis)
        return (gx,)

    return _result(out, (x,), backward, "max")


# -- linear algebra and shape ops ---------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeMismatch(f"matmul batch dims incompatible: {a.shape} @ {b.shape}") from None

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (
            None if ga is None else _unbroadcast(ga, a.shape),
            None if gb is None else _unbroadcast(gb, b.shape),
        )

    return _result(out, (a, b), backward, "matmul")


def transpose(x) -> Tensor:
    """Swap the last two axes (materialized copy)."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeMismatch("transpose needs rank >= 2")
    out = np.ascontiguousarray(np.swapaxes(x.data, -1, -2))
    return _result(out, (x,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def permute(x, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(np.transpose(x.data, axes))
    return _result(out, (x,), lambda g: (np.transpose(g, inverse),), "permute")


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeMismatch(f"cannot reshape {x.shape} to {tuple(shape)}") from None
    return _result(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeMismatch(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, ts, backward, "concat")


def concat_last_axis(a, b) -> Tensor:
    return concat([a, b], axis=-1)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if len({t.shape for t in ts}) > 1:
        raise ShapeMismatch(f"stack: shapes differ {[t.shape for t in ts]}")
    out = np.stack([t.data for t in ts], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _result(out, ts, backward, "stack")


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (int, np.integer, slice)) or p is None or p is Ellipsis for p in parts)


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    out = x.data[index]
    basic = _is_basic_index(index)
    out = np.array(out, dtype=DTYPE, copy=True).reshape(np.shape(out) or (1,))

    def backward(g):
        gx = np.zeros_like(x.data)
        g = g.reshape(np.shape(x.data[index]))
        if basic:
            gx[index] += g
        else:
            np.add.at(gx, index, g)
        return (gx,)

    return _result(out, (x,), backward, "getitem")


# -- composite-but-fused ops --------------------------------------------

def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _result(y, (x,), backward, "softmax")


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize each last-axis slice to zero mean / unit variance, then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeMismatch(f"layer_norm: gain/bias must be ({d},), got {gain.shape}, {bias.shape}")
    if eps <= 0:
        raise DomainError("layer_norm: eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gain.data + bias.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        dxhat = g * gain.data
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(out, (x, gain, bias), backward, "layer_norm")


def embedding_lookup(table, ids, pad_id: int | None = 0) -> Tensor:
    """Gather rows of ``table`` by integer ``ids``; the ``pad_id`` row gets no gradient."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    out = table.data[ids]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        if pad_id is not None:
            gt[pad_id] = 0.0
        return (gt,)

    return _result(out, (table,), backward, "embedding")


# -- verification -------------------------------------------------------

def gradcheck(
    f: Callable[..., Tensor],
    inputs: Tensor | Iterable[Tensor],
    h: float = 1e-5,
) -> float:
    """Max relative error between backprop and central finite differences.

    ``f(*inputs)`` must return a scalar tensor. Inputs are perturbed in place
    one coordinate at a time and restored afterwards. The error for each
    coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    """
    xs = [inputs] if isinstance(inputs, Tensor) else list(inputs)
    for x in xs:
        x.grad = None
    loss = f(*xs)
    loss.backward()
    analytic = [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in xs]

    worst = 0.0
    with no_grad():
        for x, a in zip(xs, analytic):
            flat = x.data.reshape(-1)
            a_flat = a.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = f(*xs).item()
                flat[i] = orig - h
                down = f(*xs).item()
                flat[i] = orig
                numeric = (up - down) / (2.0 * h)
                err = abs(a_flat[i] - numeric) / np.maximum(1.0, abs(a_flat[i]))
                worst = np.maximum(worst, err)
    for x in xs:
        x.grad = None
    return float(worst)
