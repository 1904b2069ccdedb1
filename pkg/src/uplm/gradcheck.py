"""Central finite-difference gradient checking.

This is the package's independent oracle for every analytic gradient:
run it against any scalar objective built from tape ops.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autograd import Tape, Var, value_and_grad


@dataclass
class GradCheckReport:
    analytic: np.ndarray
    numeric: np.ndarray
    rel_errors: np.ndarray
    tol: float
    failures: list[int] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return float(self.rel_errors.max()) if self.rel_errors.size else 0.0

    @property
    def passed(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        status = "pass" if self.passed else f"FAIL at {len(self.failures)} coordinates"
        return f"gradcheck: max rel err {self.max_rel_error:.3e} (tol {self.tol:.1e}) -> {status}"


def finite_difference_check(
    objective: Callable[[Tape, Var], Var],
    at: np.ndarray,
    h: float = 1e-5,
    tol: float = 1e-6,
    abs_floor: float = 1e-8,
) -> GradCheckReport:
    """Compare the analytic gradient with central differences.

    Per-coordinate relative error uses |a - n| / max(abs_floor, |a|, |n|)
    so that near-zero coordinate pairs are compared absolutely.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    at = np.array(at, dtype=np.float64)
    _, analytic = value_and_grad(objective, at)

    def value(w: np.ndarray) -> float:
        tape = Tape()
        return float(objective(tape, tape.var(w)).value)

    numeric = np.empty_like(at)
    for i in range(at.size):
        bumped = at.copy()
        bumped[i] = at[i] + h
        up = value(bumped)
        bumped[i] = at[i] - h
        down = value(bumped)
        numeric[i] = (up - down) / (2.0 * h)

    denom = np.maximum(abs_floor, np.maximum(np.abs(analytic), np.abs(numeric)))
    rel = np.abs(analytic - numeric) / denom
    failures = [int(i) for i in np.flatnonzero(rel > tol)]
    return GradCheckReport(analytic, numeric, rel, tol, failures)
