"""Tensors are plain numpy arrays; this module adds the trainable wrapper."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericalError, ShapeError

DTYPE = np.float64


def as_tensor(x, dtype=DTYPE) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x, dtype=dtype))


def check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite values in {what}")


def expect_shape(x: np.ndarray, shape: tuple, what: str) -> None:
    """Raise ShapeError unless ``x.shape`` matches ``shape`` (None = any)."""
    if len(x.shape) != len(shape) or any(s is not None and s != d for s, d in zip(shape, x.shape)):
        raise ShapeError(f"{what}: expected shape {shape}, got {x.shape}")


@dataclass
class Parameter:
    """A trainable tensor with its gradient and Adam moment buffers."""

    value: np.ndarray
    grad: np.ndarray = field(init=False)
    adam_m: np.ndarray = field(init=False)
    adam_v: np.ndarray = field(init=False)
    step_count: int = 0

    def __post_init__(self):
        self.value = as_tensor(self.value)
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0
