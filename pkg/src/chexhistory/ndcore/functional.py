"""Elementwise nonlinearities and the logit-space BCE loss."""

from __future__ import annotations

import numpy as np


def sigmoid(z) -> np.ndarray:
    """Logistic function that never exponentiates a large positive argument."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def bce_with_logits(z, y) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy over every entry of ``z``.

    Returns ``(loss, dloss/dz)``. Uses
    ``max(z, 0) - z*y + log(1 + exp(-|z|))`` which is finite for any finite z.
    """
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if z.shape != y.shape:
        raise ValueError(f"logits {z.shape} and targets {y.shape} differ in shape")
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = z.size
    loss = float(per.sum() / n)
    grad = (sigmoid(z) - y) / n
    return loss, grad
