"""Feed-forward layers with explicit forward/backward passes.

Every layer caches what it needs during ``forward`` and consumes the cache in
``backward``. ``backward`` accumulates into ``Parameter.grad`` (it never
overwrites), so two calls after one forward double the gradient.
"""

from __future__ import annotations

from collections import OrderedDict

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError
from .rng import Rng
from .tensor import Parameter


class Module:
    """Minimal container: named parameters plus child modules."""

    def __init__(self):
        self._params: "OrderedDict[str, Parameter]" = OrderedDict()
        self._children: "OrderedDict[str, Module]" = OrderedDict()
        self._cache = None

    def add_param(self, name: str, value: np.ndarray) -> Parameter:
        p = Parameter(value)
        self._params[name] = p
        return p

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def parameters(self, prefix: str = "") -> "OrderedDict[str, Parameter]":
        out: "OrderedDict[str, Parameter]" = OrderedDict()
        for name, p in self._params.items():
            out[prefix + name] = p
        for cname, child in self._children.items():
            out.update(child.parameters(prefix + cname + "."))
        return out

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def _need_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called before forward")
        return self._cache


def uniform_init(rng: Rng, shape: tuple, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def linear_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``y[i, j] = sum_k W[j, k] * x[i, k] + b[j]``."""
    if x.ndim != 2 or W.ndim != 2 or b.ndim != 1 or x.shape[1] != W.shape[1] or W.shape[0] != b.shape[0]:
        raise ShapeError(f"linear: incompatible shapes x{x.shape}, W{W.shape}, b{b.shape}")
    return x @ W.T + b


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: Rng | None = None):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        W = uniform_init(rng, (n_out, n_in), n_in) if rng is not None else np.zeros((n_out, n_in))
        self.W = self.add_param("W", W)
        self.b = self.add_param("b", np.zeros(n_out))

    def forward(self, x: np.ndarray) -> np.ndarray:
        y = linear_forward(x, self.W.value, self.b.value)
        self._cache = x
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x = self._need_cache()
        self.W.grad += dy.T @ x
        self.b.grad += dy.sum(axis=0)
        return dy @ self.W.value


class Tanh(Module):
    def forward(self, x):
        y = np.tanh(x)
        self._cache = y
        return y

    def backward(self, dy):
        y = self._need_cache()
        return dy * (1.0 - y * y)


class ReLU(Module):
    def forward(self, x):
        mask = x > 0
        self._cache = mask
        return x * mask

    def backward(self, dy):
        return dy * self._need_cache()


ACTIVATIONS = {"tanh": Tanh, "relu": ReLU}


class Flatten(Module):
    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._need_cache())


class Conv2d(Module):
    """Stride-1, zero-padded ("same") 2-D convolution over NCHW input."""

    def __init__(self, c_in: int, c_out: int, kernel: int = 3, rng: Rng | None = None):
        super().__init__()
        if kernel % 2 != 1:
            raise ValueError("kernel size must be odd")
        self.k, self.pad = kernel, kernel // 2
        shape = (c_out, c_in, kernel, kernel)
        W = uniform_init(rng, shape, c_in * kernel * kernel) if rng is not None else np.zeros(shape)
        self.W = self.add_param("W", W)
        self.b = self.add_param("b", np.zeros(c_out))

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.W.shape[1]:
            raise ShapeError(f"conv2d: expected (N, {self.W.shape[1]}, H, W) input, got {x.shape}")
        p = self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        win = sliding_window_view(xp, (self.k, self.k), axis=(2, 3))  # N C H W k k
        y = np.tensordot(win, self.W.value, axes=([1, 4, 5], [1, 2, 3]))  # N H W F
        self._cache = win
        return y.transpose(0, 3, 1, 2) + self.b.value[None, :, None, None]

    def backward(self, dy):
        win = self._need_cache()
        self.W.grad += np.tensordot(dy, win, axes=([0, 2, 3], [0, 2, 3]))
        self.b.grad += dy.sum(axis=(0, 2, 3))
        q = self.k - 1 - self.pad
        dyp = np.pad(dy, ((0, 0), (0, 0), (q, q), (q, q)))
        dwin = sliding_window_view(dyp, (self.k, self.k), axis=(2, 3))  # N F H W k k
        flipped = self.W.value[:, :, ::-1, ::-1]
        dx = np.tensordot(dwin, flipped, axes=([1, 4, 5], [0, 2, 3]))  # N H W C
        return dx.transpose(0, 3, 1, 2)


class AvgPool2(Module):
    """2x2 average pooling, stride 2. Odd trailing rows/columns are dropped."""

    def forward(self, x):
        n, c, h, w = x.shape
        h2, w2 = h // 2, w // 2
        if h2 == 0 or w2 == 0:
            raise ShapeError(f"avgpool2: spatial size {h}x{w} too small")
        self._cache = x.shape
        xc = x[:, :, : 2 * h2, : 2 * w2]
        return xc.reshape(n, c, h2, 2, w2, 2).mean(axis=(3, 5))

    def backward(self, dy):
        shape = self._need_cache()
        n, c, h2, w2 = dy.shape
        dx = np.zeros(shape)
        up = np.repeat(np.repeat(dy, 2, axis=2), 2, axis=3) * 0.25
        dx[:, :, : 2 * h2, : 2 * w2] = up
        return dx


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        self.layers = list(layers)
        for i, layer in enumerate(self.layers):
            self.add_child(str(i), layer)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        self._cache = True
        return x

    def backward(self, dy):
        self._need_cache()
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy
