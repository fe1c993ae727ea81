"""LSTM cell and a masked bidirectional LSTM layer."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ShapeMismatch
from .nn import Module, uniform
from .tensor import Tensor

# gate blocks along the 4*d_h axis
GATE_ORDER = ("input", "forget", "candidate", "output")


class LstmParams(Module):
    """Weights for one direction; columns are laid out in ``GATE_ORDER``."""

    def __init__(self, d_in: int, d_h: int, rng: np.random.Generator, forget_bias: float = 1.0):
        self.d_in = d_in
        self.d_h = d_h
        self.w_x = uniform(rng, (d_in, 4 * d_h), d_h)
        self.w_h = uniform(rng, (d_h, 4 * d_h), d_h)
        self.b = uniform(rng, (4 * d_h,), d_h)
        self.b.data[d_h : 2 * d_h] = forget_bias


def _gates(z: Tensor, c_prev: Tensor, d_h: int) -> tuple[Tensor, Tensor]:
    i = T.sigmoid(z[..., 0:d_h])
    f = T.sigmoid(z[..., d_h : 2 * d_h])
    g = T.tanh(z[..., 2 * d_h : 3 * d_h])
    o = T.sigmoid(z[..., 3 * d_h : 4 * d_h])
    c = T.add(T.mul(f, c_prev), T.mul(i, g))
    h = T.mul(o, T.tanh(c))
    return h, c


def lstm_cell(x_t, h_prev, c_prev, p: LstmParams) -> tuple[Tensor, Tensor]:
    x_t, h_prev, c_prev = T.as_tensor(x_t), T.as_tensor(h_prev), T.as_tensor(c_prev)
    if x_t.shape[-1] != p.d_in or h_prev.shape[-1] != p.d_h or c_prev.shape != h_prev.shape:
        raise ShapeMismatch(
            f"lstm_cell: x {x_t.shape}, h {h_prev.shape}, c {c_prev.shape} vs d_in={p.d_in}, d_h={p.d_h}"
        )
    z = T.add(T.add(T.matmul(x_t, p.w_x), T.matmul(h_prev, p.w_h)), p.b)
    return _gates(z, c_prev, p.d_h)


def _run_direction(xw: Tensor, mask: np.ndarray, p: LstmParams, steps) -> list[Tensor]:
    b = xw.shape[0]
    h = T.Tensor(np.zeros((b, p.d_h)))
    c = T.Tensor(np.zeros((b, p.d_h)))
    outputs: list[Tensor | None] = [None] * xw.shape[1]
    for t in steps:
        m = mask[:, t : t + 1].astype(np.float64)
        z = T.add(xw[:, t, :], T.matmul(h, p.w_h))
        h_new, c_new = _gates(z, c, p.d_h)
        # padded steps carry the state through unchanged and emit zeros
        h = T.add(T.mul(h_new, m), T.mul(h, 1.0 - m))
        c = T.add(T.mul(c_new, m), T.mul(c, 1.0 - m))
        outputs[t] = T.mul(h_new, m)
    return outputs


def bilstm(x, fwd: LstmParams, bwd: LstmParams, mask=None) -> Tensor:
    """Left-to-right and right-to-left passes concatenated per position.

    ``x`` is ``[b, n, d_in]`` and right-padded; ``mask`` is boolean ``[b, n]``.
    Output is ``[b, n, 2*d_h]`` with zeros at padded positions.
    """
    x = T.as_tensor(x)
    if x.ndim != 3 or x.shape[-1] != fwd.d_in or bwd.d_in != fwd.d_in:
        raise ShapeMismatch(f"bilstm: input {x.shape} vs d_in={fwd.d_in}/{bwd.d_in}")
    b, n, _ = x.shape
    mask = np.ones((b, n), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != (b, n):
        raise ShapeMismatch(f"bilstm: mask {mask.shape} vs input {x.shape[:2]}")
    # input projections for all steps at once
    xw_f = T.add(T.matmul(x, fwd.w_x), fwd.b)
    xw_b = T.add(T.matmul(x, bwd.w_x), bwd.b)
    out_f = _run_direction(xw_f, mask, fwd, range(n))
    out_b = _run_direction(xw_b, mask, bwd, range(n - 1, -1, -1))
    return T.concat([T.stack(out_f, axis=1), T.stack(out_b, axis=1)], axis=-1)
