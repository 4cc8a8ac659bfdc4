"""AUROC with macro/micro/weighted averaging and Poisson-bootstrap resampling."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import DataError
from .ndcore.rng import Rng

METRICS = ("macro", "micro", "weighted")
MAX_EMPTY_REDRAWS = 100


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC via midranks; ties count one half.

    Returns NaN when only one class is present (AUROC undefined).
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} differ in length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return math.nan
    ranks = rankdata(scores, method="average")
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class ScoredSet:
    scores: np.ndarray  # (n, 5) probabilities
    labels: np.ndarray  # (n, 5) in {0, 1}
    paths: list = field(default_factory=list)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.scores.shape != self.labels.shape or self.scores.ndim != 2:
            raise DataError(f"scores {self.scores.shape} and labels {self.labels.shape} must be matching 2-D arrays")
        if not np.all(np.isfinite(self.scores)):
            raise DataError("scores contain non-finite values")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise DataError("labels must be 0 or 1")

    def __len__(self) -> int:
        return self.scores.shape[0]

    def take(self, idx: np.ndarray) -> "ScoredSet":
        return ScoredSet(self.scores[idx], self.labels[idx])


def per_class_auroc(s: ScoredSet) -> np.ndarray:
    return np.array([auroc(s.scores[:, c], s.labels[:, c]) for c in range(s.scores.shape[1])])


def auroc_macro(s: ScoredSet) -> float:
    per = per_class_auroc(s)
    ok = ~np.isnan(per)
    return float(per[ok].mean()) if ok.any() else math.nan


def auroc_weighted(s: ScoredSet) -> float:
    """Per-class AUROCs weighted by the number of positives in each class."""
    per = per_class_auroc(s)
    support = s.labels.sum(axis=0).astype(np.float64)
    ok = ~np.isnan(per)
    if not ok.any() or support[ok].sum() == 0:
        return math.nan
    return float((support[ok] * per[ok]).sum() / support[ok].sum())


def auroc_micro(s: ScoredSet) -> float:
    return auroc(s.scores.ravel(), s.labels.ravel())


def all_metrics(s: ScoredSet) -> dict[str, float]:
    return {"macro": auroc_macro(s), "micro": auroc_micro(s), "weighted": auroc_weighted(s)}


@dataclass
class BootstrapResult:
    mean: dict[str, float]
    std: dict[str, float]
    samples: dict[str, list[float]]
    n_resamples: int
    seed: int


def poisson_weights(n: int, rng: Rng) -> np.ndarray:
    """Poisson(1) replication counts, redrawn while every count is zero."""
    for _ in range(MAX_EMPTY_REDRAWS):
        k = rng.poisson(1.0, size=n)
        if k.sum() > 0:
            return k
    raise DataError(f"Poisson bootstrap produced an empty resample {MAX_EMPTY_REDRAWS} times in a row")


def poisson_bootstrap(s: ScoredSet, n_resamples: int = 10, seed: int = 0) -> BootstrapResult:
    """Mean and population std of each averaged AUROC over Poisson resamples.

    Resample i draws from its own substream of ``seed``. NaN entries (metric
    undefined in that resample) are skipped when averaging across resamples.
    """
    if len(s) == 0:
        raise DataError("cannot bootstrap an empty scored set")
    root = Rng(seed)
    samples: dict[str, list[float]] = {m: [] for m in METRICS}
    for i in range(n_resamples):
        k = poisson_weights(len(s), root.child(i))
        rep = s.take(np.repeat(np.arange(len(s)), k))
        for m, v in all_metrics(rep).items():
            samples[m].append(v)
    mean, std = {}, {}
    for m in METRICS:
        vals = np.array([v for v in samples[m] if not math.isnan(v)])
        mean[m] = float(vals.mean()) if vals.size else math.nan
        std[m] = float(vals.std(ddof=0)) if vals.size else math.nan
    return BootstrapResult(mean, std, samples, n_resamples, seed)


@dataclass
class MetricsReport:
    variant: str
    split: str
    n_samples: int
    per_class: list[float]
    point: dict[str, float]
    bootstrap: BootstrapResult

    def to_json(self) -> dict:
        return {
            "variant": self.variant,
            "split": self.split,
            "n_samples": self.n_samples,
            "per_class_auroc": [_nan_to_none(v) for v in self.per_class],
            "point": {k: _nan_to_none(v) for k, v in self.point.items()},
            "bootstrap": {
                "n_resamples": self.bootstrap.n_resamples,
                "seed": self.bootstrap.seed,
                "mean": {k: _nan_to_none(v) for k, v in self.bootstrap.mean.items()},
                "std": {k: _nan_to_none(v) for k, v in self.bootstrap.std.items()},
                "samples": {k: [_nan_to_none(x) for x in v] for k, v in self.bootstrap.samples.items()},
            },
        }

    @classmethod
    def from_json(cls, d: dict) -> "MetricsReport":
        b = d["bootstrap"]
        boot = BootstrapResult(
            mean={k: _none_to_nan(v) for k, v in b["mean"].items()},
            std={k: _none_to_nan(v) for k, v in b["std"].items()},
            samples={k: [_none_to_nan(x) for x in v] for k, v in b.get("samples", {}).items()},
            n_resamples=b["n_resamples"],
            seed=b["seed"],
        )
        return cls(d["variant"], d["split"], d["n_samples"],
                   [_none_to_nan(v) for v in d["per_class_auroc"]],
                   {k: _none_to_nan(v) for k, v in d["point"].items()}, boot)


def _nan_to_none(v):
    return None if v is None or (isinstance(v, float) and math.isnan(v)) else float(v)


def _none_to_nan(v):
    return math.nan if v is None else float(v)


def evaluate_scores(s: ScoredSet, variant: str, split: str, n_resamples: int = 10, seed: int = 0) -> MetricsReport:
    return MetricsReport(
        variant=variant,
        split=split,
        n_samples=len(s),
        per_class=[float(v) for v in per_class_auroc(s)],
        point=all_metrics(s),
        bootstrap=poisson_bootstrap(s, n_resamples, seed),
    )


# --------------------------------------------------------------------------- comparison table

SPLIT_ORDER = ("valid", "test")
VARIANT_ORDER = ("baseline", "rnn-image", "rnn-image-label", "rnn-label")
VARIANT_TITLES = {"baseline": "Baseline", "rnn-image": "RNN Image",
                  "rnn-image-label": "RNN Image + Label", "rnn-label": "RNN Label"}


def _cell(mean: float, std: float) -> dict:
    """Percent-scaled display values: mean to 0.1, std to one significant digit."""
    if math.isnan(mean):
        return {"mean": None, "std": None, "text": "n/a"}
    m = round(mean * 100, 1)
    sd = float(f"{std * 100:.0e}")
    return {"mean": m, "std": sd, "text": f"{m:.1f} ± {_sci(sd)}"}


def _sci(x: float) -> str:
    """One-significant-digit scientific notation in the ``5e-2`` style."""
    if x == 0:
        return "0"
    mant, exp = f"{x:.0e}".split("e")
    return f"{mant}e{int(exp)}"


def compare_reports(reports: Sequence[MetricsReport]) -> dict:
    """Rows = variants, columns = (split, metric); each cell bootstrap mean ± std."""
    by_variant: dict[str, dict[str, MetricsReport]] = {}
    for r in reports:
        by_variant.setdefault(r.variant, {})[r.split] = r
    order = [v for v in VARIANT_ORDER if v in by_variant] + sorted(v for v in by_variant if v not in VARIANT_ORDER)
    splits = [s for s in SPLIT_ORDER if any(s in d for d in by_variant.values())]
    splits += sorted({s for d in by_variant.values() for s in d} - set(splits))
    rows = []
    for v in order:
        cells = {}
        for sp in splits:
            r = by_variant[v].get(sp)
            for m in METRICS:
                cells[f"{sp}/{m}"] = _cell(r.bootstrap.mean[m], r.bootstrap.std[m]) if r else _cell(math.nan, math.nan)
        rows.append({"variant": v, "title": VARIANT_TITLES.get(v, v), "cells": cells})
    return {"splits": splits, "metrics": list(METRICS), "rows": rows}


def format_comparison(table: dict) -> str:
    cols = [f"{sp}/{m}" for sp in table["splits"] for m in table["metrics"]]
    name_w = max([len("Model")] + [len(r["title"]) for r in table["rows"]]) + 2
    col_w = max(16, max(len(c) for c in cols) + 2)
    header = f"{'Model':<{name_w}}" + "".join(f"{c:>{col_w}}" for c in cols)
    lines = [header, "-" * len(header)]
    for r in table["rows"]:
        lines.append(f"{r['title']:<{name_w}}" + "".join(f"{r['cells'][c]['text']:>{col_w}}" for c in cols))
    lines.append("AUROC x 100, bootstrap mean ± population std")
    return "\n".join(lines)


# --------------------------------------------------------------------------- files

def write_scores(path, s: ScoredSet) -> None:
    with open(path, "w") as fh:
        for p, sc, lb in zip(s.paths, s.scores, s.labels):
            fh.write(json.dumps({"path": p, "scores": [float(x) for x in sc], "labels": [int(x) for x in lb]},
                                sort_keys=True, separators=(",", ":")) + "\n")


def read_scores(path) -> ScoredSet:
    paths, scores, labels = [], [], []
    try:
        lines = Path(path).read_text().splitlines()
    except FileNotFoundError:
        raise DataError(f"scores file not found: {path}") from None
    for i, ln in enumerate(lines, start=1):
        if not ln.strip():
            continue
        try:
            d = json.loads(ln)
            paths.append(d["path"])
            scores.append(d["scores"])
            labels.append(d["labels"])
        except (KeyError, ValueError) as e:
            raise DataError(f"{path}: line {i}: malformed score record ({e})") from None
    if not scores:
        raise DataError(f"{path}: no score records")
    return ScoredSet(np.array(scores), np.array(labels), paths)
