"""Minimal reverse-mode gradient tape over float64 numpy arrays.

Each operation computes its value eagerly and records one backward
closure on the tape. ``Tape.backward`` replays the closures strictly in
reverse recording order, so the gradient summation order is fixed and
runs are bit-identical for identical inputs and seeds.

Only the operations this package needs are provided; see `lstm_cell`
and `softmax_nll` for the fused kernels that dominate runtime.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from . import kernels as K
from .errors import NumericError


class Var:
    """A tape node: float64 value plus a lazily allocated gradient."""

    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad: np.ndarray | None = None


class Tape:
    def __init__(self):
        self._steps: list[Callable[[], None]] = []

    def var(self, value) -> Var:
        """Create a leaf variable (gradients accumulate here)."""
        return Var(np.asarray(value, dtype=np.float64))

    def record(self, fn: Callable[[], None]) -> None:
        self._steps.append(fn)

    def backward(self, out: Var, seed: float = 1.0) -> None:
        out.grad = np.full_like(out.value, seed)
        for fn in reversed(self._steps):
            fn()


def _accum(v: Var, g: np.ndarray) -> None:
    # First touch copies (never adopts) g: callers may pass views of an
    # upstream gradient or arrays they still reference.
    if v.grad is None:
        v.grad = np.array(g, dtype=np.float64)
    else:
        v.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / scalar ops


def add(tape: Tape, a: Var, b: Var) -> Var:
    out = Var(a.value + b.value)

    def backward():
        g = out.grad
        if g is None:
            return
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, _unbroadcast(g, b.value.shape))

    tape.record(backward)
    return out


def sub(tape: Tape, a: Var, b: Var) -> Var:
    out = Var(a.value - b.value)

    def backward():
        g = out.grad
        if g is None:
            return
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, -_unbroadcast(g, b.value.shape))

    tape.record(backward)
    return out


def mul(tape: Tape, a: Var, b: Var) -> Var:
    out = Var(a.value * b.value)

    def backward():
        g = out.grad
        if g is None:
            return
        _accum(a, _unbroadcast(g * b.value, a.value.shape))
        _accum(b, _unbroadcast(g * a.value, b.value.shape))

    tape.record(backward)
    return out


def mul_const(tape: Tape, a: Var, c) -> Var:
    """Multiply by a constant array or scalar (no gradient through c)."""
    out = Var(a.value * c)

    def backward():
        g = out.grad
        if g is None:
            return
        _accum(a, _unbroadcast(g * c, a.value.shape))

    tape.record(backward)
    return out


def sub_const(tape: Tape, a: Var, c) -> Var:
    out = Var(a.value - c)

    def backward():
        g = out.grad
        if g is None:
            return
        _accum(a, _unbroadcast(g, a.value.shape))

    tape.record(backward)
    return out


def sigmoid(tape: Tape, a: Var) -> Var:
    out = Var(1.0 / (1.0 + np.exp(-a.value)))

    def backward():
        g = out.grad
        if g is None:
            return
        s = out.value
        _accum(a, g * s * (1.0 - s))

    tape.record(backward)
    return out


def tanh(tape: Tape, a: Var) -> Var:
    out = Var(np.tanh(a.value))

    def backward():
        g = out.grad
        if g is None:
            return
        _accum(a, g * (1.0 - out.value * out.value))

    tape.record(backward)
    return out


def relu(tape: Tape, a: Var) -> Var:
    out = Var(np.maximum(a.value, 0.0))

    def backward():
        g = out.grad
        if g is None:
            return
        _accum(a, g * (a.value > 0.0))

    tape.record(backward)
    return out


def square(tape: Tape, a: Var) -> Var:
    out = Var(a.value * a.value)

    def backward():
        g = out.grad
        if g is None:
            return
        _accum(a, 2.0 * g * a.value)

    tape.record(backward)
    return out


def sum_all(tape: Tape, a: Var) -> Var:
    out = Var(np.asarray(a.value.sum()))

    def backward():
        g = out.grad
        if g is None:
            return
        _accum(a, np.full_like(a.value, float(g)))

    tape.record(backward)
    return out


# ---------------------------------------------------------------------------
# linear algebra


def matmul(tape: Tape, a: Var, b: Var) -> Var:
    out = Var(a.value @ b.value)

    def backward():
        g = out.grad
        if g is None:
            return
        _accum(a, g @ b.value.T)
        _accum(b, a.value.T @ g)

    tape.record(backward)
    return out


def matmul_nt(tape: Tape, a: Var, b: Var) -> Var:
    """a @ b.T without materializing the transpose."""
    out = Var(a.value @ b.value.T)

    def backward():
        g = out.grad
        if g is None:
            return
        _accum(a, g @ b.value)
        _accum(b, g.T @ a.value)

    tape.record(backward)
    return out


def matvec(tape: Tape, a: Var, x: Var) -> Var:
    out = Var(a.value @ x.value)

    def backward():
        g = out.grad
        if g is None:
            return
        _accum(a, np.outer(g, x.value))
        _accum(x, a.value.T @ g)

    tape.record(backward)
    return out


# ---------------------------------------------------------------------------
# shape / indexing ops


def block(tape: Tape, flat: Var, offset: int, shape: tuple[int, ...]) -> Var:
    """View a slice of a 1-D variable as a block of the given shape."""
    size = int(np.prod(shape)) if shape else 1
    out = Var(flat.value[offset : offset + size].reshape(shape))

    def backward():
        g = out.grad
        if g is None:
            return
        if flat.grad is None:
            flat.grad = np.zeros_like(flat.value)
        flat.grad[offset : offset + size] += g.ravel()

    tape.record(backward)
    return out


def row_slice(tape: Tape, a: Var, start: int, stop: int) -> Var:
    """View rows [start:stop) of a 2-D variable."""
    out = Var(a.value[start:stop])

    def backward():
        g = out.grad
        if g is None:
            return
        if a.grad is None:
            a.grad = np.zeros_like(a.value)
        a.grad[start:stop] += g

    tape.record(backward)
    return out


def gather_rows(tape: Tape, table: Var, idx: np.ndarray) -> Var:
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    out = Var(table.value[idx])

    def backward():
        g = out.grad
        if g is None:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.value)
        K.scatter_add_rows(table.grad, idx, g)

    tape.record(backward)
    return out


def vstack(tape: Tape, parts: Sequence[Var]) -> Var:
    out = Var(np.concatenate([p.value for p in parts], axis=0))
    sizes = [p.value.shape[0] for p in parts]

    def backward():
        g = out.grad
        if g is None:
            return
        off = 0
        for p, n in zip(parts, sizes):
            _accum(p, g[off : off + n])
            off += n

    tape.record(backward)
    return out


def concat_cols(tape: Tape, a: Var, b: Var) -> Var:
    out = Var(np.concatenate([a.value, b.value], axis=1))
    na = a.value.shape[1]

    def backward():
        g = out.grad
        if g is None:
            return
        _accum(a, g[:, :na])
        _accum(b, g[:, na:])

    tape.record(backward)
    return out


def broadcast_rows(tape: Tape, v: Var, n: int) -> Var:
    """Tile a 1-D variable into n identical rows."""
    out = Var(np.broadcast_to(v.value, (n, v.value.shape[0])))

    def backward():
        g = out.grad
        if g is None:
            return
        _accum(v, g.sum(axis=0))

    tape.record(backward)
    return out


# ---------------------------------------------------------------------------
# fused network ops


def lstm_cell(tape: Tape, z: Var, c_prev: Var) -> tuple[Var, Var]:
    """One LSTM step from gate pre-activations z (B, 4H), order i|f|g|o."""
    b, four_h = z.value.shape
    h = four_h // 4
    h_out = np.empty((b, h))
    c_out = np.empty((b, h))
    K.lstm_cell_forward(z.value, c_prev.value, h_out, c_out)
    vh, vc = Var(h_out), Var(c_out)

    def backward():
        dh, dc = vh.grad, vc.grad
        if dh is None and dc is None:
            return
        if dh is None:
            dh = np.zeros((b, h))
        if dc is None:
            dc = np.zeros((b, h))
        dz = np.empty((b, four_h))
        dc_prev = np.empty((b, h))
        K.lstm_cell_backward(z.value, c_prev.value, c_out, dh, dc, dz, dc_prev)
        _accum(z, dz)
        _accum(c_prev, dc_prev)

    tape.record(backward)
    return vh, vc


def softmax_nll(
    tape: Tape, logits: Var, targets: np.ndarray, mask: np.ndarray
) -> tuple[Var, np.ndarray]:
    """Masked total NLL (nats) of targets under softmax(logits).

    Returns the scalar loss variable and the raw per-row NLL array
    (unmasked), which evaluation reuses for per-character scores.
    """
    n = logits.value.shape[0]
    nll = np.empty(n)
    K.softmax_nll_forward(logits.value, targets, nll)
    loss = Var(np.asarray(np.dot(nll, mask)))

    def backward():
        g = loss.grad
        if g is None:
            return
        dlogits = np.empty_like(logits.value)
        K.softmax_nll_backward(logits.value, targets, mask * float(g), dlogits)
        _accum(logits, dlogits)

    tape.record(backward)
    return loss, nll


# ---------------------------------------------------------------------------
# whole-objective helpers


def value_and_grad(
    fn: Callable[[Tape, Var], Var],
    at: np.ndarray,
    block_names: Callable[[int], str] | None = None,
) -> tuple[float, np.ndarray]:
    """Evaluate a scalar objective and its gradient at a flat vector.

    `fn(tape, w)` must build the objective from tape operations. The
    returned gradient has the same flat layout as `at`. Non-finite
    results raise NumericError, naming the offending block when a
    ``block_names(index)`` resolver is supplied.
    """
    tape = Tape()
    w = tape.var(np.array(at, dtype=np.float64))
    out = fn(tape, w)
    val = float(out.value)
    if not math.isfinite(val):
        raise NumericError("objective evaluated to a non-finite value")
    tape.backward(out)
    g = w.grad if w.grad is not None else np.zeros_like(w.value)
    if not np.all(np.isfinite(g)):
        idx = int(np.flatnonzero(~np.isfinite(g))[0])
        where = block_names(idx) if block_names is not None else f"index {idx}"
        raise NumericError(f"non-finite gradient in {where}")
    return val, g


def grad(
    fn: Callable[[Tape, Var], Var],
    at: np.ndarray,
    block_names: Callable[[int], str] | None = None,
) -> np.ndarray:
    """Gradient of a scalar objective with the same flat layout as `at`."""
    return value_and_grad(fn, at, block_names)[1]
