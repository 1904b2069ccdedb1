"""Reference numpy implementations of the hot kernels.

The compiled module ``_speedups`` mirrors these signatures exactly.
Callers allocate all output arrays (C-contiguous float64). Gate
pre-activations are stored column-blocked in the order i | f | g | o.
"""

from __future__ import annotations

import numpy as np


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp may overflow to inf for very negative inputs; 1/(1+inf) is the
    # correct limit 0, so just silence the warning and stay vectorized.
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def _gates(z, n):
    # Sigmoid over the whole block (SIMD-friendly), tanh re-done on g.
    s = _sigmoid(z)
    return (
        s[:, :n],
        s[:, n : 2 * n],
        np.tanh(z[:, 2 * n : 3 * n]),
        s[:, 3 * n :],
    )


def lstm_cell_forward(z, c_prev, h_out, c_out):
    """One LSTM cell step from pre-activations.

    c = sigmoid(z_f) * c_prev + sigmoid(z_i) * tanh(z_g)
    h = sigmoid(z_o) * tanh(c)
    """
    i, f, g, o = _gates(z, c_prev.shape[1])
    np.multiply(f, c_prev, out=c_out)
    c_out += i * g
    np.tanh(c_out, out=h_out)
    h_out *= o


def lstm_cell_backward(z, c_prev, c, dh, dc_in, dz_out, dc_prev_out):
    """Backward of `lstm_cell_forward`; gates are recomputed from z."""
    n = c_prev.shape[1]
    i, f, g, o = _gates(z, n)
    tc = np.tanh(c)
    dc = dc_in + dh * o * (1.0 - tc * tc)
    dz_out[:, :n] = dc * g * i * (1.0 - i)
    dz_out[:, n : 2 * n] = dc * c_prev * f * (1.0 - f)
    dz_out[:, 2 * n : 3 * n] = dc * i * (1.0 - g * g)
    dz_out[:, 3 * n :] = dh * tc * o * (1.0 - o)
    dc_prev_out[:] = dc * f


def softmax_nll_forward(logits, targets, nll_out):
    """nll[n] = logsumexp(logits[n]) - logits[n, targets[n]]."""
    m = logits.max(axis=1)
    lse = np.log(np.exp(logits - m[:, None]).sum(axis=1)) + m
    nll_out[:] = lse - logits[np.arange(logits.shape[0]), targets]


def softmax_nll_backward(logits, targets, rowscale, dlogits_out):
    """dlogits[n] = rowscale[n] * (softmax(logits[n]) - onehot(targets[n]))."""
    m = logits.max(axis=1)
    np.exp(logits - m[:, None], out=dlogits_out)
    dlogits_out /= dlogits_out.sum(axis=1)[:, None]
    dlogits_out *= rowscale[:, None]
    rows = np.arange(logits.shape[0])
    dlogits_out[rows, targets] -= rowscale


def scatter_add_rows(table, idx, rows):
    """table[idx[n]] += rows[n], with repeated indices accumulated."""
    np.add.at(table, idx, rows)
