"""Training loop: bucketed mini-batches, Adam, reduce-on-plateau, best-validation selection."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .curate import HistoryDatapoint
from .errors import DataError, NumericalError, UsageError
from .models import N_LABELS, Batch, HistoryClassifier, Variant
from .ndcore.optim import adam_step
from .ndcore.rng import Rng
from .preprocess import AugmentConfig, Normalizer, augment, resize_bilinear
from .tensorio import TensorStore


@dataclass
class SchedulerConfig:
    factor: float = 0.1
    patience: int = 2
    min_lr: float = 1e-6


@dataclass
class TrainConfig:
    lr: float = 1e-3
    max_epochs: int = 30
    batch_size: int = 32
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    augmentation: AugmentConfig = field(default_factory=AugmentConfig)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.scheduler, dict):
            self.scheduler = SchedulerConfig(**self.scheduler)
        if isinstance(self.augmentation, dict):
            self.augmentation = AugmentConfig(**self.augmentation)
        if not self.lr > 0:
            raise UsageError(f"lr must be positive, got {self.lr}")
        if not 0 < self.scheduler.factor < 1:
            raise UsageError(f"scheduler factor must lie in (0, 1), got {self.scheduler.factor}")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise UsageError("max_epochs and batch_size must be >= 1")


class ReduceLROnPlateau:
    """Multiply the lr by ``factor`` once validation loss has failed to improve
    for more than ``patience`` consecutive epochs; never go below ``min_lr``."""

    def __init__(self, lr: float, factor: float = 0.1, patience: int = 2, min_lr: float = 1e-6):
        self.lr = lr
        self.factor, self.patience, self.min_lr = factor, patience, min_lr
        self.best = math.inf
        self.num_bad = 0

    def step(self, metric: float) -> float:
        if metric < self.best:
            self.best = metric
            self.num_bad = 0
        else:
            self.num_bad += 1
        if self.num_bad > self.patience:
            self.lr = max(self.lr * self.factor, self.min_lr)
            self.num_bad = 0
        return self.lr


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    valid_loss: float
    lr: float
    wall_time: float

    def to_json(self) -> dict:
        return asdict(self)


def select_best(logs: Sequence[EpochLog]) -> EpochLog:
    """Epoch with minimal validation loss (earliest on ties)."""
    if not logs:
        raise ValueError("no epochs logged")
    return min(logs, key=lambda e: (e.valid_loss, e.epoch))


# --------------------------------------------------------------------------- data

@dataclass
class PreprocessConfig:
    mean: tuple = (0.449,)
    std: tuple = (0.226,)

    def __post_init__(self):
        self.mean, self.std = tuple(self.mean), tuple(self.std)


class ImageProvider:
    """Looks up scans in a tensor file and applies resize/augment/normalize."""

    def __init__(self, store: TensorStore, model: HistoryClassifier, prep: PreprocessConfig | None = None):
        self.store = store
        self.cfg = model.encoder_cfg
        prep = prep or PreprocessConfig()
        self.normalizer = Normalizer(prep.mean, prep.std)
        self._resized: dict[str, np.ndarray] = {}
        self._clean: dict[str, np.ndarray] = {}

    def _raw(self, path: str) -> np.ndarray:
        if path not in self._resized:
            x = self.store.get(path).astype(np.float64)
            if self.cfg.kind == "precomputed":
                if x.shape != (self.cfg.latent_dim,):
                    raise DataError(f"feature for {path!r} has shape {x.shape}, expected ({self.cfg.latent_dim},)")
            else:
                x = resize_bilinear(x, self.cfg.height, self.cfg.width)
            self._resized[path] = x
        return self._resized[path]

    def clean(self, path: str) -> np.ndarray:
        if path not in self._clean:
            x = self._raw(path)
            self._clean[path] = x if self.cfg.kind == "precomputed" else self.normalizer(x)
        return self._clean[path]

    def augmented(self, path: str, rng: Rng, aug: AugmentConfig) -> np.ndarray:
        if self.cfg.kind == "precomputed" or aug.is_identity:
            return self.clean(path)
        return self.normalizer(augment(self._raw(path), rng, aug))


def make_batches(datapoints: Sequence[HistoryDatapoint], variant: Variant, batch_size: int,
                 rng: Rng | None = None) -> list[list[int]]:
    """Index batches grouped by history length (one bucket for the baseline).

    With ``rng`` the bucket contents and the batch order are shuffled; the
    whole epoch's order is fixed up front from the seed.
    """
    buckets: dict[int, list[int]] = {}
    for i, d in enumerate(datapoints):
        key = len(d.history) if variant.uses_history else 0
        buckets.setdefault(key, []).append(i)
    batches = []
    for key in sorted(buckets):
        idx = buckets[key]
        if rng is not None:
            idx = [idx[j] for j in rng.permutation(len(idx))]
        batches.extend(idx[s:s + batch_size] for s in range(0, len(idx), batch_size))
    if rng is not None:
        batches = [batches[j] for j in rng.permutation(len(batches))]
    return batches


def build_batch(dps: Sequence[HistoryDatapoint], variant: Variant, provider: ImageProvider | None,
                aug_rng: Rng | None = None, aug: AugmentConfig | None = None) -> Batch:
    B = len(dps)
    T = len(dps[0].history) if variant.uses_history else 0
    hist = np.zeros((B, T, N_LABELS))
    if T:
        hist[:] = [[s.labels for s in d.history] for d in dps]
    targets = np.array([d.target.labels for d in dps], dtype=np.float64)
    images = None
    if variant.uses_images:
        if provider is None:
            raise UsageError(f"variant {variant.value} needs images")
        rows = []
        for d in dps:
            scans = d.scans if variant.uses_history else (d.target,)
            if aug_rng is not None:
                rows.append([provider.augmented(s.path, aug_rng, aug) for s in scans])
            else:
                rows.append([provider.clean(s.path) for s in scans])
        images = np.array(rows)
    return Batch(images, hist, targets, [d.target.path for d in dps])


def iterate_batches(model: HistoryClassifier, dps, provider, batch_size: int = 256):
    for idx in make_batches(dps, model.variant, batch_size):
        yield idx, build_batch([dps[i] for i in idx], model.variant, provider)


def dataset_loss(model: HistoryClassifier, dps, provider, batch_size: int = 256) -> float:
    """Mean BCE over all datapoints, no augmentation."""
    total = 0.0
    for idx, batch in iterate_batches(model, dps, provider, batch_size):
        total += model.loss(batch) * len(idx)
    return total / len(dps)


def predict_dataset(model: HistoryClassifier, dps, provider, batch_size: int = 256) -> np.ndarray:
    """(n, 5) probabilities in the order of ``dps``."""
    out = np.empty((len(dps), N_LABELS))
    for idx, batch in iterate_batches(model, dps, provider, batch_size):
        out[idx] = model.predict(batch)
    return out


# --------------------------------------------------------------------------- loop

@dataclass
class FitResult:
    logs: list[EpochLog]
    best_epoch: int
    best_valid_loss: float
    best_state: dict


def fit(model: HistoryClassifier, train: Sequence[HistoryDatapoint], valid: Sequence[HistoryDatapoint],
        provider: ImageProvider | None, cfg: TrainConfig,
        on_epoch: Callable[[EpochLog], None] | None = None,
        valid_loss_fn: Callable[[HistoryClassifier, int], float] | None = None) -> FitResult:
    """Train ``model`` in place and leave it holding the best-validation weights.

    ``valid_loss_fn(model, epoch)`` replaces the validation pass (used to script
    loss sequences in tests).
    """
    if not train or not valid:
        raise DataError("training and validation splits must be non-empty")
    root = Rng(cfg.seed)
    params = list(model.parameters().values())
    sched = ReduceLROnPlateau(cfg.lr, cfg.scheduler.factor, cfg.scheduler.patience, cfg.scheduler.min_lr)
    lr = cfg.lr
    logs: list[EpochLog] = []
    best_loss, best_epoch, best_state = math.inf, 0, None
    use_aug = model.variant.uses_images and not cfg.augmentation.is_identity
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        batches = make_batches(train, model.variant, cfg.batch_size, root.child(1).child(epoch))
        aug_root = root.child(2).child(epoch)
        total = 0.0
        for bi, idx in enumerate(batches):
            dps = [train[i] for i in idx]
            aug_rng = aug_root.child(bi) if use_aug else None
            batch = build_batch(dps, model.variant, provider, aug_rng, cfg.augmentation)
            loss = model.loss_and_backward(batch)
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite training loss at epoch {epoch}, batch {bi} "
                                     f"(first target {dps[0].target.path!r})")
            adam_step(params, lr)
            total += loss * len(idx)
        train_loss = total / len(train)
        if valid_loss_fn is not None:
            valid_loss = float(valid_loss_fn(model, epoch))
        else:
            valid_loss = dataset_loss(model, valid, provider)
        if not math.isfinite(valid_loss):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}")
        log = EpochLog(epoch, train_loss, valid_loss, lr, time.perf_counter() - t0)
        logs.append(log)
        if on_epoch is not None:
            on_epoch(log)
        if valid_loss < best_loss:
            best_loss, best_epoch = valid_loss, epoch
            best_state = {k: v.copy() for k, v in model.state().items()}
        lr = sched.step(valid_loss)
    model.load_state(best_state)
    return FitResult(logs, best_epoch, best_loss, best_state)


def write_epoch_logs(path, logs: Sequence[EpochLog]) -> None:
    with open(path, "w") as fh:
        for log in logs:
            fh.write(json.dumps(log.to_json(), sort_keys=True) + "\n")
