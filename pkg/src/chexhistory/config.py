"""YAML pipeline configuration.

One file may hold every section; each command reads the ones it needs::

    synth:      SynthConfig fields
    curate:     max_age_diff, min_images, split_ratios, split_seed, age_window
    data:       train, valid, test, images  (paths, relative to the working directory)
    model:      encoder: EncoderConfig fields; head: SequenceHeadConfig fields
    preprocess: mean, std  (per-channel normalization constants)
    train:      TrainConfig fields, with nested scheduler / augmentation mappings

Command-line flags override file values.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import yaml

from .curate import CurationConfig
from .errors import DataError, UsageError
from .models import EncoderConfig, SequenceHeadConfig
from .preprocess import AugmentConfig
from .synth import SynthConfig
from .train import PreprocessConfig, SchedulerConfig, TrainConfig

SECTIONS = ("synth", "curate", "data", "model", "preprocess", "train")


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise DataError(f"config file not found: {path}") from None
    try:
        doc = yaml.safe_load(text) or {}
    except yaml.YAMLError as e:
        raise UsageError(f"malformed config {path}: {e}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"config {path} must be a mapping at the top level")
    unknown = set(doc) - set(SECTIONS)
    if unknown:
        raise UsageError(f"unknown config sections {sorted(unknown)}; expected {SECTIONS}")
    return doc


def build(cls, values: dict | None, where: str):
    values = dict(values or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise UsageError(f"unknown keys in [{where}]: {sorted(unknown)}")
    for k, v in values.items():
        if isinstance(v, list):
            values[k] = tuple(v)
    try:
        return cls(**values)
    except TypeError as e:
        raise UsageError(f"bad values in [{where}]: {e}") from None


def synth_config(doc: dict, **overrides) -> SynthConfig:
    d = dict(doc.get("synth") or {})
    d.update({k: v for k, v in overrides.items() if v is not None})
    return build(SynthConfig, d, "synth")


def curation_config(doc: dict, **overrides) -> CurationConfig:
    d = dict(doc.get("curate") or {})
    d.update({k: v for k, v in overrides.items() if v is not None})
    return build(CurationConfig, d, "curate")


def model_configs(doc: dict) -> tuple[EncoderConfig, SequenceHeadConfig]:
    m = doc.get("model") or {}
    unknown = set(m) - {"encoder", "head"}
    if unknown:
        raise UsageError(f"unknown keys in [model]: {sorted(unknown)}")
    return build(EncoderConfig, m.get("encoder"), "model.encoder"), build(SequenceHeadConfig, m.get("head"), "model.head")


def preprocess_config(doc: dict) -> PreprocessConfig:
    return build(PreprocessConfig, doc.get("preprocess"), "preprocess")


def train_config(doc: dict, **overrides) -> TrainConfig:
    d = dict(doc.get("train") or {})
    d.update({k: v for k, v in overrides.items() if v is not None})
    d["scheduler"] = build(SchedulerConfig, d.get("scheduler"), "train.scheduler")
    d["augmentation"] = build(AugmentConfig, d.get("augmentation"), "train.augmentation")
    return build(TrainConfig, d, "train")
