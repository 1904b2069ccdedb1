"""Adam optimizer and gradient clipping.

Sign convention, stated once for the whole package: objectives are
always expressed as quantities to *minimize* (negative log-likelihoods,
penalties), and `adam_step` moves parameters against the gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError


@dataclass
class AdamState:
    step: int
    m: np.ndarray
    v: np.ndarray
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, n: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(0, np.zeros(n), np.zeros(n), beta1, beta2, eps)


def adam_step(
    state: AdamState, params: np.ndarray, grad: np.ndarray, lr: float
) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam update; returns new state and parameters."""
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise ValueError(
            f"shape mismatch: params {params.shape}, grad {grad.shape}, state {state.m.shape}"
        )
    if lr <= 0:
        raise ValueError("lr must be positive")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return AdamState(t, m, v, state.beta1, state.beta2, state.eps), new_params


def clip_global_norm(grad: np.ndarray, max_norm: float) -> np.ndarray:
    """Scale the gradient down so its L2 norm is at most max_norm."""
    norm = float(np.linalg.norm(grad))
    if not np.isfinite(norm):
        raise NumericError("gradient norm is non-finite")
    if norm <= max_norm or norm == 0.0:
        return grad
    return grad * (max_norm / norm)
