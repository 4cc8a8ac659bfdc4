"""Builders for CheXpert-format CSV text used across the test suite."""

from chexhistory.curate import OBSERVATIONS

CELLS = ("", "1.0", "0.0", "-1.0")


def csv_line(path, age, labels=None, view="Frontal", sex="Female"):
    """One row; ``labels`` maps observation name -> cell text."""
    labels = labels or {}
    cells = [path, sex, str(age), view, "AP" if view == "Frontal" else ""]
    cells += [labels.get(o, "") for o in OBSERVATIONS]
    return ",".join(cells)


def csv_text(rows) -> str:
    header = "Path,Sex,Age,Frontal/Lateral,AP/PA," + ",".join(OBSERVATIONS)
    return "\n".join([header] + list(rows)) + "\n"


def random_patients_csv(rng, n_patients: int, max_scans: int = 7, lateral_p: float = 0.0):
    """Random patients with clustered ages (frequent ties) and random label cells.

    Returns the CSV text and the frontal scans as (patient_id, intra_order, age, path)
    tuples, intra_order counting every row of the patient in file order.
    """
    rows, scans = [], []
    for p in range(1, n_patients + 1):
        pid = f"patient{p:05d}"
        n = int(rng.integers(1, max_scans + 1))
        base = int(rng.integers(20, 80))
        ages = base + rng.integers(0, 8, size=n)
        for j, age in enumerate(ages):
            path = f"train/{pid}/study{j + 1}/view1_frontal.jpg"
            view = "Lateral" if rng.random() < lateral_p else "Frontal"
            labels = {o: CELLS[int(rng.integers(0, 4))] for o in OBSERVATIONS}
            rows.append(csv_line(path, int(age), labels, view=view))
            if view == "Frontal":
                scans.append((pid, j, int(age), path))
    return csv_text(rows), scans


def toy_model(variant, seed=0, latent=6, hidden=5, size=4, kind="mlp"):
    from chexhistory.models import EncoderConfig, HistoryClassifier, SequenceHeadConfig
    enc = EncoderConfig(kind=kind, latent_dim=latent, height=size, width=size, mlp_hidden=7, cnn_channels=(2, 3))
    return HistoryClassifier(variant, enc, SequenceHeadConfig(hidden_dim=hidden), seed=seed)


def random_batch(rng, batch_size=3, history_len=2, size=4, latent=None):
    """Random images (or latents), binary history labels and targets."""
    from chexhistory.models import Batch
    shape = (latent,) if latent else (1, size, size)
    images = rng.normal(size=(batch_size, history_len + 1) + shape)
    hist = (rng.random((batch_size, history_len, 5)) < 0.5).astype(float)
    targets = (rng.random((batch_size, 5)) < 0.5).astype(float)
    return Batch(images, hist, targets)


def tiny_dataset(out_dir, n_patients=40, noise=0.1, amplitude=0.6, size=10, seed=0):
    """Nearly separable synthetic data: (train, valid, test, TensorStore, EncoderConfig)."""
    import io
    from pathlib import Path

    from chexhistory.curate import CurationConfig, build_histories, frontal_only, parse_chexpert_csv, split_by_patient
    from chexhistory.models import EncoderConfig
    from chexhistory.synth import SynthConfig, gen_dataset
    from chexhistory.tensorio import TensorStore

    cfg = SynthConfig(n_patients=n_patients, image_size=(size, size), noise=noise, amplitude=amplitude, seed=seed)
    gen_dataset(cfg, out_dir)
    scans = frontal_only(parse_chexpert_csv(io.StringIO((Path(out_dir) / "labels.csv").read_text())))
    splits = split_by_patient(build_histories(scans, CurationConfig()), CurationConfig())
    enc = EncoderConfig(kind="mlp", latent_dim=8, height=size, width=size, mlp_hidden=16)
    return splits["train"], splits["valid"], splits["test"], TensorStore(Path(out_dir) / "images.bin"), enc
