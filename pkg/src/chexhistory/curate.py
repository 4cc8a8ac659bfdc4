"""Patient-history dataset construction from CheXpert-format metadata.

Pipeline: parse the CSV, keep frontal scans, build one datapoint per scan that
has enough earlier scans of the same patient inside the age window, then split
patients (not datapoints) into train/valid/test.
"""

from __future__ import annotations

import csv
import enum
import json
import re
from bisect import bisect_left, bisect_right
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DataError, UsageError
from .ndcore.rng import Rng

OBSERVATIONS = (
    "No Finding",
    "Enlarged Cardiomediastinum",
    "Cardiomegaly",
    "Lung Opacity",
    "Lung Lesion",
    "Edema",
    "Consolidation",
    "Pneumonia",
    "Atelectasis",
    "Pneumothorax",
    "Pleural Effusion",
    "Pleural Other",
    "Fracture",
    "Support Devices",
)
TARGET_LABELS = ("Cardiomegaly", "Edema", "Consolidation", "Atelectasis", "Pleural Effusion")
# uncertain -> positive for these, negative for the other targets
UNCERTAIN_POSITIVE = frozenset({"Edema", "Atelectasis"})
META_COLUMNS = ("Path", "Sex", "Age", "Frontal/Lateral", "AP/PA")
CSV_COLUMNS = META_COLUMNS + OBSERVATIONS

_PATH_RE = re.compile(r"(?:^|/)(patient\d+)/(study\d+)/")


class RawLabel(enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    UNCERTAIN = "uncertain"
    BLANK = "blank"


_CELL_TO_RAW = {"1.0": RawLabel.POSITIVE, "1": RawLabel.POSITIVE,
                "0.0": RawLabel.NEGATIVE, "0": RawLabel.NEGATIVE,
                "-1.0": RawLabel.UNCERTAIN, "-1": RawLabel.UNCERTAIN, "": RawLabel.BLANK}


@dataclass(frozen=True)
class ScanRecord:
    patient_id: str
    study_id: str
    intra_order: int
    path: str
    sex: str  # male | female | unknown
    age: int
    view: str  # frontal | lateral
    raw_labels: tuple  # 14 RawLabel values in OBSERVATIONS order

    def __post_init__(self):
        if not self.patient_id or not self.study_id:
            raise DataError(f"empty patient/study id for {self.path!r}")
        if self.age < 0:
            raise DataError(f"negative age for {self.path!r}")

    @property
    def labels(self) -> tuple[int, ...]:
        return map_labels(self.raw_labels)


@dataclass(frozen=True)
class ScanRef:
    """The part of a scan a datapoint needs: where it is, when, and its labels."""

    path: str
    age: int
    labels: tuple[int, ...]

    @classmethod
    def from_record(cls, rec: ScanRecord) -> "ScanRef":
        return cls(rec.path, rec.age, rec.labels)


@dataclass(frozen=True)
class HistoryDatapoint:
    patient_id: str
    target: ScanRef
    history: tuple[ScanRef, ...]  # oldest first

    @property
    def scans(self) -> tuple[ScanRef, ...]:
        return self.history + (self.target,)

    def to_json(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "target_path": self.target.path,
            "target_labels": list(self.target.labels),
            "target_age": self.target.age,
            "history": [{"path": s.path, "labels": list(s.labels), "age": s.age} for s in self.history],
            "ages": [s.age for s in self.scans],
        }

    @classmethod
    def from_json(cls, d: dict) -> "HistoryDatapoint":
        target = ScanRef(d["target_path"], int(d["target_age"]), tuple(int(v) for v in d["target_labels"]))
        hist = tuple(ScanRef(h["path"], int(h["age"]), tuple(int(v) for v in h["labels"])) for h in d["history"])
        return cls(d["patient_id"], target, hist)


@dataclass
class CurationConfig:
    max_age_diff: int = 3
    min_images: int = 1
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    split_seed: int = 0
    age_window: str = "inclusive"  # or "exclusive": target.age - scan.age < max_age_diff

    def __post_init__(self):
        if self.min_images < 1:
            raise UsageError(f"min_images must be >= 1, got {self.min_images}")
        if self.max_age_diff < 0:
            raise UsageError(f"max_age_diff must be >= 0, got {self.max_age_diff}")
        if len(self.split_ratios) != 3 or any(r < 0 for r in self.split_ratios):
            raise UsageError(f"split_ratios must be three nonnegative fractions, got {self.split_ratios}")
        if abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise UsageError(f"split_ratios must sum to 1, got {sum(self.split_ratios)}")
        if self.age_window not in ("inclusive", "exclusive"):
            raise UsageError(f"age_window must be 'inclusive' or 'exclusive', got {self.age_window!r}")

    def in_window(self, target_age: int, scan_age: int) -> bool:
        diff = target_age - scan_age
        if self.age_window == "inclusive":
            return 0 <= diff <= self.max_age_diff
        return 0 <= diff < self.max_age_diff


# --------------------------------------------------------------------------- parsing

def _sex(cell: str) -> str:
    cell = cell.strip().lower()
    return cell if cell in ("male", "female") else "unknown"


def parse_chexpert_csv(source) -> list[ScanRecord]:
    """Read a CheXpert-style CSV (path or open text file) into ScanRecords."""
    if isinstance(source, (str, Path)):
        try:
            with open(source, newline="") as fh:
                return parse_chexpert_csv(fh)
        except FileNotFoundError:
            raise DataError(f"CSV file not found: {source}") from None
    reader = csv.reader(source)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError("CSV file is empty (no header row)") from None
    for col in CSV_COLUMNS:
        if col not in header:
            raise DataError(f"CSV is missing required column {col!r}")
    pos = {name: header.index(name) for name in CSV_COLUMNS}
    obs_pos = [pos[o] for o in OBSERVATIONS]
    per_patient: dict[str, int] = defaultdict(int)
    records = []
    for rownum, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) < len(header):
            raise DataError(f"row {rownum}: expected {len(header)} cells, got {len(row)}")
        path = row[pos["Path"]].strip()
        m = _PATH_RE.search(path)
        if m is None:
            raise DataError(f"row {rownum}: cannot extract patient/study from path {path!r}")
        age_cell = row[pos["Age"]].strip()
        try:
            age_f = float(age_cell)
        except ValueError:
            raise DataError(f"row {rownum}: unparsable age {age_cell!r}") from None
        if age_f != int(age_f) or age_f < 0:
            raise DataError(f"row {rownum}: age must be a nonnegative integer, got {age_cell!r}")
        raw = []
        for name, i in zip(OBSERVATIONS, obs_pos):
            cell = row[i].strip()
            if cell not in _CELL_TO_RAW:
                raise DataError(f"row {rownum}: unexpected value {cell!r} in column {name!r}")
            raw.append(_CELL_TO_RAW[cell])
        view_cell = row[pos["Frontal/Lateral"]].strip().lower()
        if view_cell not in ("frontal", "lateral"):
            raise DataError(f"row {rownum}: Frontal/Lateral must be Frontal or Lateral, got {view_cell!r}")
        patient = m.group(1)
        records.append(ScanRecord(
            patient_id=patient,
            study_id=m.group(2),
            intra_order=per_patient[patient],
            path=path,
            sex=_sex(row[pos["Sex"]]),
            age=int(age_f),
            view=view_cell,
            raw_labels=tuple(raw),
        ))
        per_patient[patient] += 1
    return records


def map_labels(raw: Sequence[RawLabel]) -> tuple[int, ...]:
    """Reduce 14 raw observations to the 5 binary targets. Blank counts as negative."""
    if len(raw) != len(OBSERVATIONS):
        raise DataError(f"expected {len(OBSERVATIONS)} raw observations, got {len(raw)}")
    out = []
    for name in TARGET_LABELS:
        v = raw[OBSERVATIONS.index(name)]
        if v is RawLabel.POSITIVE:
            out.append(1)
        elif v is RawLabel.UNCERTAIN:
            out.append(1 if name in UNCERTAIN_POSITIVE else 0)
        else:
            out.append(0)
    return tuple(out)


def frontal_only(scans: Iterable[ScanRecord]) -> list[ScanRecord]:
    return [s for s in scans if s.view == "frontal"]


# --------------------------------------------------------------------------- histories

def canonical_order(scans: Iterable[ScanRecord]) -> list[ScanRecord]:
    return sorted(scans, key=lambda s: (s.age, s.intra_order))


def _patient_datapoints(scans: list[ScanRecord], cfg: CurationConfig) -> list[HistoryDatapoint]:
    ordered = canonical_order(scans)
    ages = [s.age for s in ordered]
    out = []
    for i, target in enumerate(ordered):
        # ages are sorted, so qualifying earlier scans form a contiguous run ending at i
        if cfg.age_window == "inclusive":
            lo = bisect_left(ages, target.age - cfg.max_age_diff, 0, i)
        else:
            lo = bisect_right(ages, target.age - cfg.max_age_diff, 0, i)
        if i - lo >= cfg.min_images:
            out.append(HistoryDatapoint(
                patient_id=target.patient_id,
                target=ScanRef.from_record(target),
                history=tuple(ScanRef.from_record(s) for s in ordered[lo:i]),
            ))
    return out


def group_by_patient(scans: Iterable[ScanRecord]) -> dict[str, list[ScanRecord]]:
    groups: dict[str, list[ScanRecord]] = defaultdict(list)
    for s in scans:
        groups[s.patient_id].append(s)
    return groups


def build_histories(scans: Iterable[ScanRecord], cfg: CurationConfig) -> list[HistoryDatapoint]:
    """All history datapoints, ordered by (patient_id, target canonical position)."""
    groups = group_by_patient(scans)
    out = []
    for pid in sorted(groups):
        out.extend(_patient_datapoints(groups[pid], cfg))
    return out


# --------------------------------------------------------------------------- splitting

SPLIT_NAMES = ("train", "valid", "test")


def _split_counts(n: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment; every positive-ratio split gets >= 1 patient."""
    exact = [n * r for r in ratios]
    counts = [int(e) for e in exact]
    order = sorted(range(3), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    for i in range(3):
        if ratios[i] > 0 and counts[i] == 0:
            donor = max(range(3), key=lambda j: (counts[j], -j))
            counts[donor] -= 1
            counts[i] += 1
    return counts


def split_by_patient(datapoints: Sequence[HistoryDatapoint], cfg: CurationConfig) -> dict[str, list[HistoryDatapoint]]:
    """Shuffle sorted patient ids with ``cfg.split_seed`` and cut by patient count."""
    patients = sorted({d.patient_id for d in datapoints})
    if len(patients) < 3:
        raise DataError(f"need at least 3 patients to split, got {len(patients)}")
    perm = Rng(cfg.split_seed).permutation(len(patients))
    shuffled = [patients[i] for i in perm]
    counts = _split_counts(len(patients), cfg.split_ratios)
    assignment = {}
    start = 0
    for name, c in zip(SPLIT_NAMES, counts):
        for pid in shuffled[start:start + c]:
            assignment[pid] = name
        start += c
    out: dict[str, list[HistoryDatapoint]] = {name: [] for name in SPLIT_NAMES}
    for d in datapoints:
        out[assignment[d.patient_id]].append(d)
    return out


# --------------------------------------------------------------------------- statistics

@dataclass
class SplitStats:
    name: str
    image_count: int
    datapoint_count: int
    positive_rates: list[float] = field(default_factory=lambda: [0.0] * 5)

    def to_json(self) -> dict:
        return {"name": self.name, "images": self.image_count, "datapoints": self.datapoint_count,
                "positive_rates": self.positive_rates}


def compute_stats(datapoints: Sequence[HistoryDatapoint], name: str = "split") -> SplitStats:
    """Distinct images, target count and per-label positive percentage of targets."""
    if not datapoints:
        return SplitStats(name, 0, 0, [0.0] * 5)
    images = {s.path for d in datapoints for s in d.scans}
    n = len(datapoints)
    pos = [sum(d.target.labels[c] for d in datapoints) for c in range(5)]
    return SplitStats(name, len(images), n, [100.0 * p / n for p in pos])


def full_stats(scans: Sequence[ScanRecord], name: str = "full") -> SplitStats:
    """Statistics treating every scan as its own datapoint (no history restriction)."""
    if not scans:
        return SplitStats(name, 0, 0, [0.0] * 5)
    n = len(scans)
    pos = [sum(s.labels[c] for s in scans) for c in range(5)]
    return SplitStats(name, len({s.path for s in scans}), n, [100.0 * p / n for p in pos])


def format_stats_table(rows: Sequence[SplitStats]) -> str:
    head = f"{'Dataset':<10}{'Images':>10}{'Datapoints':>12}" + "".join(f"{f'R_{i}':>8}" for i in range(5))
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r.name:<10}{r.image_count:>10}{r.datapoint_count:>12}"
                     + "".join(f"{v:>8.1f}" for v in r.positive_rates))
    lines.append("R_i: % of targets positive for " + ", ".join(TARGET_LABELS))
    return "\n".join(lines)


# --------------------------------------------------------------------------- files

def write_datapoints(path, datapoints: Iterable[HistoryDatapoint]) -> None:
    with open(path, "w") as fh:
        for d in datapoints:
            fh.write(json.dumps(d.to_json(), sort_keys=True, separators=(",", ":")) + "\n")


def read_datapoints(path) -> list[HistoryDatapoint]:
    try:
        with open(path) as fh:
            lines = [ln for ln in fh if ln.strip()]
    except FileNotFoundError:
        raise DataError(f"datapoints file not found: {path}") from None
    out = []
    for i, ln in enumerate(lines, start=1):
        try:
            out.append(HistoryDatapoint.from_json(json.loads(ln)))
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"{path}: line {i}: malformed datapoint ({e})") from None
    return out
