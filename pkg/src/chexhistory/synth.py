"""Synthetic longitudinal patients in CheXpert format.

Each class bit follows its own two-state Markov chain over a patient's scans:
the first scan draws Bernoulli(prevalence), later scans keep the previous bit
with probability ``persistence`` and otherwise redraw from Bernoulli(prevalence).
The chain is stationary at ``prevalence``.

A scan's image is ``sum_c bit_c * amplitude * template_c`` plus Gaussian pixel
noise, clamped to [0, 1]. Templates are disjoint horizontal bands (hence
orthogonal), so each class is decoded from its own band only.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import log_ndtr

from .curate import CSV_COLUMNS, OBSERVATIONS, TARGET_LABELS, UNCERTAIN_POSITIVE
from .errors import UsageError
from .evaluate import auroc
from .ndcore.rng import Rng
from .tensorio import write_tensors

N_CLASSES = len(TARGET_LABELS)


@dataclass
class SynthConfig:
    n_patients: int = 500
    scans_per_patient: tuple = (2, 6)  # inclusive range
    age_start: tuple = (30, 80)  # inclusive range, years
    age_gap: tuple = (1, 2)  # inclusive range, years; >= 1 so ages strictly increase
    prevalence: tuple = (0.15, 0.35, 0.10, 0.30, 0.45)
    persistence: float = 0.9
    image_size: tuple = (32, 32)
    amplitude: float = 0.25
    noise: float = 2.0
    uncertain_fraction: float = 0.0
    lateral_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.scans_per_patient = tuple(self.scans_per_patient)
        self.age_start = tuple(self.age_start)
        self.age_gap = tuple(self.age_gap)
        self.prevalence = tuple(float(p) for p in self.prevalence)
        self.image_size = tuple(self.image_size)
        if self.n_patients < 1:
            raise UsageError("n_patients must be >= 1")
        if len(self.prevalence) != N_CLASSES or not all(0 < p < 1 for p in self.prevalence):
            raise UsageError(f"prevalence must be {N_CLASSES} values in (0, 1)")
        if not 0 <= self.persistence <= 1:
            raise UsageError("persistence must lie in [0, 1]")
        if self.noise < 0:
            raise UsageError("noise must be >= 0")
        lo, hi = self.scans_per_patient
        if not 1 <= lo <= hi:
            raise UsageError("scans_per_patient must be an increasing range starting at >= 1")
        if not 0 <= self.age_start[0] <= self.age_start[1]:
            raise UsageError("age_start must be a nonnegative increasing range")
        if not 1 <= self.age_gap[0] <= self.age_gap[1]:
            raise UsageError("age_gap must be a range with minimum >= 1 (ages strictly increase)")
        if self.image_size[0] < N_CLASSES or self.image_size[1] < 1:
            raise UsageError(f"image height must be at least {N_CLASSES} to hold one band per class")
        if not 0 <= self.uncertain_fraction <= 1 or not 0 <= self.lateral_fraction <= 1:
            raise UsageError("uncertain_fraction and lateral_fraction must lie in [0, 1]")

    @property
    def band_height(self) -> int:
        return self.image_size[0] // N_CLASSES


def templates(cfg: SynthConfig) -> np.ndarray:
    """(5, H, W) indicator bands; class c owns rows [c*b, (c+1)*b)."""
    h, w = cfg.image_size
    b = cfg.band_height
    t = np.zeros((N_CLASSES, h, w))
    for c in range(N_CLASSES):
        t[c, c * b:(c + 1) * b, :] = 1.0
    return t


def label_chain(n_scans: int, prevalence, persistence: float, rng: Rng) -> np.ndarray:
    """(n_scans, 5) binary labels from independent per-class Markov chains."""
    p = np.asarray(prevalence)
    out = np.zeros((n_scans, N_CLASSES), dtype=np.int64)
    out[0] = rng.random(N_CLASSES) < p
    for t in range(1, n_scans):
        keep = rng.random(N_CLASSES) < persistence
        fresh = rng.random(N_CLASSES) < p
        out[t] = np.where(keep, out[t - 1], fresh)
    return out


def render_image(bits, cfg: SynthConfig, rng: Rng, tmpl: np.ndarray | None = None) -> np.ndarray:
    tmpl = templates(cfg) if tmpl is None else tmpl
    mean = cfg.amplitude * np.tensordot(np.asarray(bits, dtype=np.float64), tmpl, axes=1)
    img = mean + rng.normal(0.0, 1.0, size=mean.shape) * cfg.noise
    return np.clip(img, 0.0, 1.0)


@dataclass
class SynthScan:
    path: str
    age: int
    labels: list
    view: str = "frontal"


@dataclass
class SynthPatient:
    patient_id: str
    sex: str
    scans: list = field(default_factory=list)


def _cell(value: int) -> str:
    return "1.0" if value else "0.0"


def generate(cfg: SynthConfig) -> tuple[list[SynthPatient], dict[str, np.ndarray], str]:
    """Return (patients, images keyed by path, CSV text)."""
    root = Rng(cfg.seed)
    tmpl = templates(cfg)
    patients: list[SynthPatient] = []
    images: dict[str, np.ndarray] = {}
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    obs_index = {name: OBSERVATIONS.index(name) for name in TARGET_LABELS}
    for i in range(cfg.n_patients):
        rng = root.child(i)
        pid = f"patient{i + 1:05d}"
        n = int(rng.integers(cfg.scans_per_patient[0], cfg.scans_per_patient[1] + 1))
        age = int(rng.integers(cfg.age_start[0], cfg.age_start[1] + 1))
        sex = "Male" if rng.random() < 0.5 else "Female"
        labels = label_chain(n, cfg.prevalence, cfg.persistence, rng)
        pat = SynthPatient(pid, sex)
        for j in range(n):
            if j > 0:
                age += int(rng.integers(cfg.age_gap[0], cfg.age_gap[1] + 1))
            study = f"synthetic/train/{pid}/study{j + 1}"
            path = f"{study}/view1_frontal.jpg"
            bits = labels[j]
            images[path] = render_image(bits, cfg, rng, tmpl).astype(np.float32)[None]
            pat.scans.append(SynthScan(path, age, [int(b) for b in bits]))
            cells = [""] * len(OBSERVATIONS)
            for c, name in enumerate(TARGET_LABELS):
                cells[obs_index[name]] = _cell(bits[c])
                # rewrite only where the uncertainty policy maps back to the true bit
                maps_back = bool(bits[c]) == (name in UNCERTAIN_POSITIVE)
                if maps_back and cfg.uncertain_fraction > 0 and rng.random() < cfg.uncertain_fraction:
                    cells[obs_index[name]] = "-1.0"
            ap = "AP" if rng.random() < 0.5 else "PA"
            writer.writerow([path, sex, age, "Frontal", ap] + cells)
            if cfg.lateral_fraction > 0 and rng.random() < cfg.lateral_fraction:
                lat = f"{study}/view2_lateral.jpg"
                writer.writerow([lat, sex, age, "Lateral", ""] + cells)
                pat.scans.append(SynthScan(lat, age, [int(b) for b in bits], "lateral"))
        patients.append(pat)
    return patients, images, buf.getvalue()


def ground_truth_json(patients: list[SynthPatient]) -> dict:
    return {"labels": list(TARGET_LABELS),
            "patients": {p.patient_id: {"sex": p.sex, "scans": [asdict(s) for s in p.scans]} for p in patients}}


def gen_dataset(cfg: SynthConfig, out_dir) -> dict:
    """Write ``labels.csv``, ``images.bin`` (+ index), ``ground_truth.json``, ``synth_config.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    patients, images, csv_text = generate(cfg)
    (out / "labels.csv").write_text(csv_text)
    write_tensors(out / "images.bin", images)
    (out / "ground_truth.json").write_text(json.dumps(ground_truth_json(patients), sort_keys=True, indent=1) + "\n")
    (out / "synth_config.json").write_text(json.dumps(asdict(cfg), sort_keys=True, indent=2) + "\n")
    n_scans = sum(1 for p in patients for s in p.scans if s.view == "frontal")
    return {"patients": len(patients), "frontal_scans": n_scans, "images": len(images),
            "csv": str(out / "labels.csv"), "images_file": str(out / "images.bin")}


# --------------------------------------------------------------------------- Bayes oracles

def _censored_loglik(x: np.ndarray, mu: float, sigma: float) -> np.ndarray:
    """Log-likelihood of clamped-Gaussian pixels (point masses at 0 and 1)."""
    dens = -0.5 * ((x - mu) / sigma) ** 2 - math.log(sigma) - 0.5 * math.log(2 * math.pi)
    at0 = log_ndtr((0.0 - mu) / sigma)
    at1 = log_ndtr((mu - 1.0) / sigma)
    return np.where(x <= 0.0, at0, np.where(x >= 1.0, at1, dens))


def image_log_odds(band_pixels: np.ndarray, cfg: SynthConfig) -> np.ndarray:
    """Log likelihood ratio bit=1 vs bit=0 from one class's band, summed over pixels."""
    if cfg.noise == 0:
        on = np.all(np.isclose(band_pixels, min(cfg.amplitude, 1.0)), axis=-1)
        return np.where(on, np.inf, -np.inf)
    l1 = _censored_loglik(band_pixels, cfg.amplitude, cfg.noise)
    l0 = _censored_loglik(band_pixels, 0.0, cfg.noise)
    return (l1 - l0).sum(axis=-1)


ORACLE_KINDS = ("image-only-Bayes", "label-history-Bayes", "combined-Bayes")


def oracle_auroc(cfg: SynthConfig, kind: str, n_samples: int = 100_000, seed: int = 12345,
                 chunk: int = 20_000) -> dict:
    """Monte-Carlo AUROC of the exact posterior under the generative model.

    ``image-only-Bayes`` sees the target image; ``label-history-Bayes`` sees the
    previous scan's labels; ``combined-Bayes`` sees both. Pairs are drawn at
    stationarity (previous bit ~ Bernoulli(prevalence)).
    """
    if kind not in ORACLE_KINDS:
        raise UsageError(f"oracle kind must be one of {ORACLE_KINDS}")
    rng = Rng(seed)
    p = np.asarray(cfg.prevalence)
    rho = cfg.persistence
    w = cfg.image_size[1]
    n_band = cfg.band_height * w
    scores = np.empty((n_samples, N_CLASSES))
    labels = np.empty((n_samples, N_CLASSES), dtype=np.int64)
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        prev = rng.random((m, N_CLASSES)) < p
        keep = rng.random((m, N_CLASSES)) < rho
        fresh = rng.random((m, N_CLASSES)) < p
        cur = np.where(keep, prev, fresh)
        prior_hist = np.where(prev, rho + (1 - rho) * p, (1 - rho) * p)
        if kind == "label-history-Bayes":
            s = prior_hist
        else:
            band = cur[..., None] * cfg.amplitude + rng.normal(0.0, 1.0, (m, N_CLASSES, n_band)) * cfg.noise
            llr = image_log_odds(np.clip(band, 0.0, 1.0), cfg)
            prior = p if kind == "image-only-Bayes" else prior_hist
            with np.errstate(over="ignore"):
                s = 1.0 / (1.0 + np.exp(-(llr + np.log(prior) - np.log1p(-prior))))
        scores[done:done + m] = s
        labels[done:done + m] = cur
        done += m
    per_class = [auroc(scores[:, c], labels[:, c]) for c in range(N_CLASSES)]
    return {"kind": kind, "n_samples": n_samples, "per_class": per_class,
            "macro": float(np.nanmean(per_class)), "micro": auroc(scores.ravel(), labels.ravel())}


def calibration_table(cfg: SynthConfig, n_samples: int = 100_000, seed: int = 12345) -> dict:
    return {kind: oracle_auroc(cfg, kind, n_samples, seed) for kind in ORACLE_KINDS}


def load_synth_config(d: dict) -> SynthConfig:
    known = set(SynthConfig.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise UsageError(f"unknown synth config keys: {sorted(unknown)}")
    return SynthConfig(**d)
