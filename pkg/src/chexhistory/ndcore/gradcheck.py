"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from ..errors import NumericalError
from .tensor import Parameter

# Entries whose gradients are this small in magnitude are compared absolutely.
# Central differences at h=1e-5 carry ~1e-11 of cancellation noise on O(1) losses.
DEFAULT_FLOOR = 1e-5


@dataclass
class GradCheckReport:
    max_rel_err: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-5

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.max_rel_err.values())

    @property
    def worst(self) -> float:
        return max(self.max_rel_err.values(), default=0.0)

    def failures(self) -> dict[str, float]:
        return {k: v for k, v in self.max_rel_err.items() if v >= self.tolerance}


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = DEFAULT_FLOOR) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(
    loss_fn: Callable[[], float],
    grad_fn: Callable[[], None],
    params: Mapping[str, Parameter],
    tolerance: float = 1e-5,
    h: float = 1e-5,
    floor: float = DEFAULT_FLOOR,
) -> GradCheckReport:
    """Compare analytic gradients with central differences, one scalar at a time.

    ``loss_fn`` runs a forward pass and returns the scalar loss. ``grad_fn``
    runs forward + backward and leaves dL/dparam in each ``Parameter.grad``.
    """
    report = GradCheckReport(tolerance=tolerance)
    for p in params.values():
        if p.value.dtype != np.float64:
            raise TypeError("grad_check requires float64 parameters")
        p.zero_grad()
    grad_fn()
    analytic = {name: p.grad.copy() for name, p in params.items()}
    for p in params.values():
        p.zero_grad()

    for name, p in params.items():
        a = analytic[name]
        if not np.all(np.isfinite(a)):
            raise NumericalError(f"non-finite analytic gradient for parameter {name!r}")
        flat = p.value.reshape(-1)
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericalError(f"non-finite loss while perturbing parameter {name!r}[{i}]")
            numeric[i] = (up - down) / (2.0 * h)
        err = relative_error(a.reshape(-1), numeric, floor)
        report.max_rel_err[name] = float(err.max()) if err.size else 0.0
    return report
