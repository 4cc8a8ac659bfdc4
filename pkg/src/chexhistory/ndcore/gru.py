"""Gated recurrent units with hand-written backpropagation through time.

Cell equations (reset gate applied before the recurrent candidate matmul)::

    z  = sigmoid(W_z x + U_z h + b_z)
    r  = sigmoid(W_r x + U_r h + b_r)
    n  = tanh(W_h x + U_h (r * h) + b_h)
    h' = (1 - z) * h + z * n

Sequences are batched as ``(batch, time, features)`` arrays. All sequences in a
batch share one length; callers bucket by length instead of padding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError
from .functional import sigmoid
from .layers import Module, uniform_init
from .rng import Rng

GATES = ("z", "r", "h")


@dataclass
class GruParams:
    """Raw weights of one GRU direction. Shapes: W (H, D), U (H, H), b (H,)."""

    W_z: np.ndarray
    U_z: np.ndarray
    b_z: np.ndarray
    W_r: np.ndarray
    U_r: np.ndarray
    b_r: np.ndarray
    W_h: np.ndarray
    U_h: np.ndarray
    b_h: np.ndarray

    def __post_init__(self):
        hidden, n_in = self.W_z.shape
        for g in GATES:
            W, U, b = getattr(self, f"W_{g}"), getattr(self, f"U_{g}"), getattr(self, f"b_{g}")
            if W.shape != (hidden, n_in) or U.shape != (hidden, hidden) or b.shape != (hidden,):
                raise ShapeError(
                    f"gate {g}: W{W.shape} U{U.shape} b{b.shape} inconsistent with "
                    f"input_dim={n_in}, hidden_dim={hidden}"
                )

    @property
    def input_dim(self) -> int:
        return self.W_z.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W_z.shape[0]


def gru_cell_forward(x: np.ndarray, h_prev: np.ndarray, p: GruParams) -> np.ndarray:
    """One GRU step. ``x`` is (D,) or (B, D); ``h_prev`` is (H,) or (B, H)."""
    if x.shape[-1] != p.input_dim or h_prev.shape[-1] != p.hidden_dim:
        raise ShapeError(
            f"gru cell: x{x.shape}, h{h_prev.shape} vs input_dim={p.input_dim}, hidden_dim={p.hidden_dim}"
        )
    z = sigmoid(x @ p.W_z.T + h_prev @ p.U_z.T + p.b_z)
    r = sigmoid(x @ p.W_r.T + h_prev @ p.U_r.T + p.b_r)
    n = np.tanh(x @ p.W_h.T + (r * h_prev) @ p.U_h.T + p.b_h)
    return (1.0 - z) * h_prev + z * n


class GRU(Module):
    """One direction over a full sequence; returns every hidden state."""

    def __init__(self, input_dim: int, hidden_dim: int, rng: Rng | None = None):
        super().__init__()
        self.input_dim, self.hidden_dim = input_dim, hidden_dim
        for g in GATES:
            if rng is None:
                W, U = np.zeros((hidden_dim, input_dim)), np.zeros((hidden_dim, hidden_dim))
            else:
                W = uniform_init(rng, (hidden_dim, input_dim), input_dim)
                U = uniform_init(rng, (hidden_dim, hidden_dim), hidden_dim)
            self.add_param(f"W_{g}", W)
            self.add_param(f"U_{g}", U)
            self.add_param(f"b_{g}", np.zeros(hidden_dim))

    def raw(self) -> GruParams:
        return GruParams(**{k: v.value for k, v in self._params.items()})

    def forward(self, xs: np.ndarray) -> np.ndarray:
        """``xs`` (B, T, D) -> hidden states (B, T, H), starting from h = 0."""
        if xs.ndim != 3 or xs.shape[2] != self.input_dim:
            raise ShapeError(f"gru: expected (B, T, {self.input_dim}) input, got {xs.shape}")
        B, T, _ = xs.shape
        if T < 1:
            raise ShapeError("gru: empty sequence")
        P = {k: v.value for k, v in self._params.items()}
        H = self.hidden_dim
        hs = np.zeros((B, T + 1, H))
        zs = np.empty((B, T, H))
        rs = np.empty((B, T, H))
        ns = np.empty((B, T, H))
        # input projections for all steps at once; z and r gates share one matmul
        W_all = np.concatenate([P["W_z"], P["W_r"], P["W_h"]])
        b_all = np.concatenate([P["b_z"], P["b_r"], P["b_h"]])
        ax = xs @ W_all.T + b_all
        U_zr = np.concatenate([P["U_z"], P["U_r"]]).T
        U_hT = P["U_h"].T
        for t in range(T):
            h = hs[:, t]
            zr = sigmoid(ax[:, t, : 2 * H] + h @ U_zr)
            z, r = zr[:, :H], zr[:, H:]
            n = np.tanh(ax[:, t, 2 * H:] + (r * h) @ U_hT)
            hs[:, t + 1] = (1.0 - z) * h + z * n
            zs[:, t], rs[:, t], ns[:, t] = z, r, n
        self._cache = (xs, hs, zs, rs, ns)
        return hs[:, 1:].copy()

    def backward(self, dhs: np.ndarray) -> np.ndarray:
        """``dhs`` (B, T, H) = dL/d(output states) -> dL/dxs (B, T, D)."""
        xs, hs, zs, rs, ns = self._need_cache()
        P = {k: v.value for k, v in self._params.items()}
        G = self._params
        B, T, _ = xs.shape
        da = {g: np.empty((B, T, self.hidden_dim)) for g in GATES}
        carry = np.zeros((B, self.hidden_dim))
        for t in range(T - 1, -1, -1):
            h_prev, z, r, n = hs[:, t], zs[:, t], rs[:, t], ns[:, t]
            dh = dhs[:, t] + carry
            dz = dh * (n - h_prev)
            dn = dh * z
            dh_prev = dh * (1.0 - z)
            da_h = dn * (1.0 - n * n)
            drh = da_h @ P["U_h"]
            G["U_h"].grad += da_h.T @ (r * h_prev)
            dr = drh * h_prev
            dh_prev += drh * r
            da_r = dr * r * (1.0 - r)
            da_z = dz * z * (1.0 - z)
            G["U_r"].grad += da_r.T @ h_prev
            G["U_z"].grad += da_z.T @ h_prev
            dh_prev += da_r @ P["U_r"] + da_z @ P["U_z"]
            da["z"][:, t], da["r"][:, t], da["h"][:, t] = da_z, da_r, da_h
            carry = dh_prev
        dxs = np.zeros_like(xs)
        flat_x = xs.reshape(B * T, -1)
        for g in GATES:
            flat = da[g].reshape(B * T, -1)
            G[f"W_{g}"].grad += flat.T @ flat_x
            G[f"b_{g}"].grad += flat.sum(axis=0)
            dxs += da[g] @ P[f"W_{g}"]
        return dxs


class BiGRULayer(Module):
    """Forward and time-reversed GRU; per-step outputs concatenated (B, T, 2H)."""

    def __init__(self, input_dim: int, hidden_dim: int, rng: Rng | None = None, bidirectional: bool = True):
        super().__init__()
        self.bidirectional = bidirectional
        self.hidden_dim = hidden_dim
        self.fwd = self.add_child("fwd", GRU(input_dim, hidden_dim, rng))
        self.bwd = self.add_child("bwd", GRU(input_dim, hidden_dim, rng)) if bidirectional else None

    @property
    def output_dim(self) -> int:
        return self.hidden_dim * (2 if self.bidirectional else 1)

    def forward(self, xs):
        out_f = self.fwd.forward(xs)
        self._cache = True
        if not self.bidirectional:
            return out_f
        out_b = self.bwd.forward(xs[:, ::-1])[:, ::-1]
        return np.concatenate([out_f, out_b], axis=2)

    def backward(self, dout):
        self._need_cache()
        H = self.hidden_dim
        dxs = self.fwd.backward(np.ascontiguousarray(dout[:, :, :H]))
        if self.bidirectional:
            dxs = dxs + self.bwd.backward(np.ascontiguousarray(dout[:, ::-1, H:]))[:, ::-1]
        return dxs


READOUTS = ("last_step", "final_states")


class GRUStack(Module):
    """Stacked (bi)GRU layers with a fixed-size readout.

    ``last_step`` returns the top layer's output at the final time step: the
    forward state after the whole sequence and the backward direction's output
    at that same position. ``final_states`` instead takes each direction's
    state after consuming its entire input (backward state at position 0).
    """

    def __init__(
        self,
        input_dim: int,
        hidden_dim: int,
        num_layers: int = 1,
        bidirectional: bool = True,
        readout: str = "last_step",
        rng: Rng | None = None,
    ):
        super().__init__()
        if readout not in READOUTS:
            raise ValueError(f"readout must be one of {READOUTS}, got {readout!r}")
        if num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        self.readout = readout
        self.hidden_dim = hidden_dim
        self.bidirectional = bidirectional
        self.layers = []
        d = input_dim
        for i in range(num_layers):
            layer = BiGRULayer(d, hidden_dim, rng, bidirectional)
            self.add_child(f"layer{i}", layer)
            self.layers.append(layer)
            d = layer.output_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].output_dim

    def forward(self, xs: np.ndarray) -> np.ndarray:
        if xs.ndim != 3 or xs.shape[1] < 1:
            raise ShapeError(f"bigru: expected non-empty (B, T, D) sequence, got {xs.shape}")
        for layer in self.layers:
            xs = layer.forward(xs)
        self._cache = xs.shape
        H = self.hidden_dim
        if self.readout == "last_step" or not self.bidirectional:
            return xs[:, -1].copy()
        return np.concatenate([xs[:, -1, :H], xs[:, 0, H:]], axis=1)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        shape = self._need_cache()
        dout = np.zeros(shape)
        H = self.hidden_dim
        if self.readout == "last_step" or not self.bidirectional:
            dout[:, -1] = dy
        else:
            dout[:, -1, :H] = dy[:, :H]
            dout[:, 0, H:] = dy[:, H:]
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout


def bigru_forward(xs, p_fwd: GruParams, p_bwd: GruParams) -> np.ndarray:
    """Functional single-sequence bidirectional pass with the ``last_step`` readout.

    ``xs`` is a sequence of (D,) vectors; returns a (2H,) vector.
    """
    xs = [np.asarray(x, dtype=np.float64) for x in xs]
    if not xs:
        raise ShapeError("bigru_forward: empty sequence")
    h = np.zeros(p_fwd.hidden_dim)
    for x in xs:
        h = gru_cell_forward(x, h, p_fwd)
    hb = gru_cell_forward(xs[-1], np.zeros(p_bwd.hidden_dim), p_bwd)
    return np.concatenate([h, hb])
