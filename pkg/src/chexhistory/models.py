"""The four classifiers: a single-image baseline and three recurrent variants.

Sequence variants see the patient's scans oldest first, target last. At step t
the recurrent input is built from the encoded image Z_t and/or the labels of
the *previous* scan Y_{t-1} (zeros at t = 0), so the target's own labels never
enter the model.
"""

from __future__ import annotations

import enum
import re
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ShapeError, UsageError
from .ndcore import checkpoint
from .ndcore.functional import bce_with_logits, sigmoid
from .ndcore.gradcheck import GradCheckReport, grad_check
from .ndcore.gru import READOUTS, GRUStack
from .ndcore.layers import (ACTIVATIONS, AvgPool2, Conv2d, Flatten, Linear, Module,
                            Sequential)
from .ndcore.rng import Rng

N_LABELS = 5


class Variant(str, enum.Enum):
    BASELINE = "baseline"
    RNN_IMAGE = "rnn-image"
    RNN_IMAGE_LABEL = "rnn-image-label"
    RNN_LABEL = "rnn-label"

    @property
    def uses_images(self) -> bool:
        return self is not Variant.RNN_LABEL

    @property
    def uses_history(self) -> bool:
        return self is not Variant.BASELINE

    @property
    def uses_labels(self) -> bool:
        return self in (Variant.RNN_IMAGE_LABEL, Variant.RNN_LABEL)

    @classmethod
    def parse(cls, name) -> "Variant":
        """Accept ``rnn-image-label``, ``RnnImageLabel``, ``rnn_image+label`` and the like."""
        if isinstance(name, Variant):
            return name
        key = re.sub(r"[^a-z]", "", str(name).lower())
        for v in cls:
            if key == v.value.replace("-", ""):
                return v
        raise UsageError(f"unknown model variant {name!r}; choose from {[v.value for v in cls]}")


@dataclass
class EncoderConfig:
    kind: str = "mlp"  # small_cnn | mlp | precomputed
    latent_dim: int = 64
    channels: int = 1
    height: int = 32
    width: int = 32
    mlp_hidden: int = 128
    cnn_channels: tuple = (8, 16)
    activation: str = "tanh"

    def __post_init__(self):
        if self.kind not in ("small_cnn", "mlp", "precomputed"):
            raise UsageError(f"encoder kind must be small_cnn, mlp or precomputed, got {self.kind!r}")
        if self.latent_dim < 1:
            raise UsageError("latent_dim must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise UsageError(f"activation must be one of {sorted(ACTIVATIONS)}")
        self.cnn_channels = tuple(self.cnn_channels)

    @property
    def input_shape(self) -> tuple:
        if self.kind == "precomputed":
            return (self.latent_dim,)
        return (self.channels, self.height, self.width)


@dataclass
class SequenceHeadConfig:
    hidden_dim: int = 64
    num_layers: int = 1
    bidirectional: bool = True
    readout: str = "last_step"
    label_dim: int = N_LABELS

    def __post_init__(self):
        if self.hidden_dim < 1 or self.num_layers < 1:
            raise UsageError("hidden_dim and num_layers must be >= 1")
        if self.label_dim != N_LABELS:
            raise UsageError(f"label_dim must be {N_LABELS}")
        if self.readout not in READOUTS:
            raise UsageError(f"readout must be one of {READOUTS}")


class Identity(Module):
    def forward(self, x):
        self._cache = True
        return x

    def backward(self, dy):
        self._need_cache()
        return dy


def build_encoder(cfg: EncoderConfig, rng: Rng) -> Module:
    act = ACTIVATIONS[cfg.activation]
    if cfg.kind == "precomputed":
        return Identity()
    if cfg.kind == "mlp":
        n_in = cfg.channels * cfg.height * cfg.width
        return Sequential(Flatten(), Linear(n_in, cfg.mlp_hidden, rng), act(),
                          Linear(cfg.mlp_hidden, cfg.latent_dim, rng))
    c1, c2 = cfg.cnn_channels
    h, w = cfg.height // 4, cfg.width // 4
    if h == 0 or w == 0:
        raise UsageError("small_cnn needs images at least 4x4")
    return Sequential(Conv2d(cfg.channels, c1, 3, rng), act(), AvgPool2(),
                      Conv2d(c1, c2, 3, rng), act(), AvgPool2(),
                      Flatten(), Linear(c2 * h * w, cfg.latent_dim, rng))


@dataclass
class Batch:
    """A same-length group of datapoints.

    images: (B, S, *input_shape) with the target last, or None for RnnLabel.
        The baseline only needs S = 1 (the target).
    history_labels: (B, S - 1, 5) labels of the history scans, oldest first.
    targets: (B, 5) target labels; read by the loss only, never by the model.
    """

    images: np.ndarray | None
    history_labels: np.ndarray
    targets: np.ndarray | None = None
    paths: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.history_labels.shape[0]

    @property
    def seq_len(self) -> int:
        return self.history_labels.shape[1] + 1


def assemble_inputs(variant: Variant, Z: np.ndarray | None, history_labels: np.ndarray) -> np.ndarray:
    """Recurrent inputs X (B, S, D) from latents Z (B, S, L) and history labels (B, S-1, 5)."""
    variant = Variant.parse(variant)
    if history_labels.ndim != 3 or history_labels.shape[2] != N_LABELS:
        raise ShapeError(f"history labels must be (B, T, {N_LABELS}), got {history_labels.shape}")
    B, T, _ = history_labels.shape
    if variant.uses_labels:
        shifted = np.concatenate([np.zeros((B, 1, N_LABELS)), history_labels], axis=1)
    if variant is Variant.RNN_LABEL:
        return shifted
    if Z is None or Z.ndim != 3 or Z.shape[:2] != (B, T + 1):
        got = None if Z is None else Z.shape
        raise ShapeError(f"latents must be (B={B}, S={T + 1}, L), got {got}")
    if variant is Variant.RNN_IMAGE_LABEL:
        return np.concatenate([Z, shifted], axis=2)
    return Z


class HistoryClassifier(Module):
    """Encoder + (bi)GRU head + linear classifier, or encoder + linear for the baseline."""

    def __init__(self, variant, encoder: EncoderConfig | None = None,
                 head: SequenceHeadConfig | None = None, seed: int = 0, rng: Rng | None = None):
        super().__init__()
        self.variant = Variant.parse(variant)
        self.encoder_cfg = encoder or EncoderConfig()
        self.head_cfg = head or SequenceHeadConfig()
        rng = rng if rng is not None else Rng(seed)
        L = self.encoder_cfg.latent_dim
        self.encoder = self.add_child("encoder", build_encoder(self.encoder_cfg, rng)) if self.variant.uses_images else None
        if self.variant is Variant.BASELINE:
            self.rnn = None
            self.classifier = self.add_child("classifier", Linear(L, N_LABELS, rng))
        else:
            d_in = {Variant.RNN_IMAGE: L, Variant.RNN_IMAGE_LABEL: L + N_LABELS, Variant.RNN_LABEL: N_LABELS}[self.variant]
            hc = self.head_cfg
            self.rnn = self.add_child("rnn", GRUStack(d_in, hc.hidden_dim, hc.num_layers, hc.bidirectional, hc.readout, rng))
            self.classifier = self.add_child("classifier", Linear(self.rnn.output_dim, N_LABELS, rng))

    # ------------------------------------------------------------------ forward/backward

    def _encode(self, images: np.ndarray) -> np.ndarray:
        shape = self.encoder_cfg.input_shape
        if images.shape[-len(shape):] != shape:
            raise ShapeError(f"encoder expects inputs of shape {shape}, got {images.shape[-len(shape):]}")
        lead = images.shape[: images.ndim - len(shape)]
        flat = images.reshape((-1,) + shape)
        return self.encoder.forward(flat).reshape(lead + (self.encoder_cfg.latent_dim,))

    def encode_image(self, image: np.ndarray) -> np.ndarray:
        """Latent vector for one image (the encoder shared by every position)."""
        if self.encoder is None:
            raise UsageError("the rnn-label variant has no image encoder")
        return self._encode(np.asarray(image, dtype=np.float64)[None])[0]

    def forward(self, batch: Batch) -> np.ndarray:
        v = self.variant
        if v is Variant.BASELINE:
            if batch.images is None:
                raise ShapeError("baseline needs target images")
            z = self._encode(batch.images[:, -1])
            self._cache = ("baseline", batch.images.shape)
            return self.classifier.forward(z)
        Z = None
        if v.uses_images:
            if batch.images is None or batch.images.shape[1] != batch.seq_len:
                raise ShapeError("sequence variants need one image per scan (history + target)")
            Z = self._encode(batch.images)
        X = assemble_inputs(v, Z, batch.history_labels)
        h = self.rnn.forward(X)
        self._cache = ("seq", None if Z is None else Z.shape)
        return self.classifier.forward(h)

    def backward(self, dlogits: np.ndarray) -> None:
        kind, shape = self._need_cache()
        dh = self.classifier.backward(dlogits)
        if kind == "baseline":
            self.encoder.backward(dh)
            return
        dX = self.rnn.backward(dh)
        if shape is not None:
            L = self.encoder_cfg.latent_dim
            dZ = dX[:, :, :L]
            self.encoder.backward(np.ascontiguousarray(dZ.reshape(-1, L)))

    def predict(self, batch: Batch) -> np.ndarray:
        return sigmoid(self.forward(batch))

    def loss(self, batch: Batch) -> float:
        return bce_with_logits(self.forward(batch), batch.targets)[0]

    def loss_and_backward(self, batch: Batch) -> float:
        loss, g = bce_with_logits(self.forward(batch), batch.targets)
        self.backward(g)
        return loss

    # ------------------------------------------------------------------ persistence

    def config_dict(self) -> dict:
        return {"variant": self.variant.value, "encoder": asdict(self.encoder_cfg), "head": asdict(self.head_cfg)}

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, p.value) for k, p in self.parameters().items())

    def load_state(self, state) -> None:
        params = self.parameters()
        if list(params) != list(state):
            raise UsageError("checkpoint parameters do not match the model architecture")
        for k, p in params.items():
            if p.value.shape != state[k].shape:
                raise ShapeError(f"parameter {k}: checkpoint shape {state[k].shape} != model {p.value.shape}")
            p.value[...] = state[k]

    def save(self, path, extra: dict | None = None) -> None:
        cfg = self.config_dict()
        if extra:
            cfg.update(extra)
        checkpoint.save(path, self.variant.value, cfg, self.state())

    def to_bytes(self, extra: dict | None = None) -> bytes:
        cfg = self.config_dict()
        if extra:
            cfg.update(extra)
        return checkpoint.dumps(self.variant.value, cfg, self.state())

    @classmethod
    def from_config(cls, cfg: dict) -> "HistoryClassifier":
        return cls(cfg["variant"], EncoderConfig(**cfg["encoder"]), SequenceHeadConfig(**cfg["head"]))

    @classmethod
    def load(cls, path) -> tuple["HistoryClassifier", dict]:
        variant, cfg, state = checkpoint.load(path)
        model = cls.from_config(cfg)
        model.load_state(state)
        return model, cfg


def make_batch(datapoints, images: dict | None = None) -> Batch:
    """Batch from same-length datapoints; ``images`` maps scan path -> array."""
    if len({len(d.history) for d in datapoints}) != 1:
        raise ShapeError("all datapoints in a batch must have the same history length")
    hist = np.array([[s.labels for s in d.history] for d in datapoints], dtype=np.float64)
    hist = hist.reshape(len(datapoints), len(datapoints[0].history), N_LABELS)
    targets = np.array([d.target.labels for d in datapoints], dtype=np.float64)
    imgs = None
    if images is not None:
        imgs = np.stack([np.stack([images[s.path] for s in d.scans]) for d in datapoints])
    return Batch(imgs, hist, targets, [d.target.path for d in datapoints])


def toy_gradient_check(variant, latent: int = 8, hidden: int = 12, seq_len: int = 4, batch_size: int = 2,
                       encoder: str = "mlp", seed: int = 0, tolerance: float = 1e-5
                       ) -> tuple[GradCheckReport, HistoryClassifier]:
    """Finite-difference check of one variant on random toy data.

    The mlp encoder reads 2x2 images and small_cnn reads 8x8 ones so the check
    stays fast; precomputed feeds random latents straight to the head.
    """
    variant = Variant.parse(variant)
    rng = Rng(seed)
    if encoder == "precomputed":
        enc = EncoderConfig(kind="precomputed", latent_dim=latent)
    elif encoder == "small_cnn":
        enc = EncoderConfig(kind="small_cnn", latent_dim=latent, height=8, width=8, cnn_channels=(2, 3))
    elif encoder == "mlp":
        enc = EncoderConfig(kind="mlp", latent_dim=latent, height=2, width=2, mlp_hidden=6)
    else:
        raise UsageError(f"unknown encoder kind {encoder!r}")
    model = HistoryClassifier(variant, enc, SequenceHeadConfig(hidden_dim=hidden), rng=rng.child(0))
    data = rng.child(1)
    images = data.normal(size=(batch_size, seq_len) + enc.input_shape)
    hist = (data.random((batch_size, seq_len - 1, N_LABELS)) < 0.5).astype(float)
    targets = (data.random((batch_size, N_LABELS)) < 0.5).astype(float)
    if not variant.uses_history:
        images, hist = images[:, -1:], hist[:, :0]
    batch = Batch(images, hist, targets)
    report = grad_check(lambda: model.loss(batch), lambda: model.loss_and_backward(batch),
                        model.parameters(), tolerance=tolerance)
    return report, model
