import io
import json
from pathlib import Path

import numpy as np
import pytest

from chexhistory.curate import CurationConfig, build_histories, frontal_only, parse_chexpert_csv
from chexhistory.errors import DataError, UsageError
from chexhistory.ndcore.rng import Rng
from chexhistory.synth import (SynthConfig, gen_dataset, generate, label_chain, oracle_auroc, render_image,
                               templates)
from chexhistory.tensorio import TensorStore, decode_record, encode_record, write_tensors

SMALL = dict(n_patients=40, image_size=(10, 6))


class TestLabelChain:
    def test_full_persistence_keeps_labels(self):
        labels = label_chain(50, (0.3,) * 5, 1.0, Rng(0))
        assert np.all(labels == labels[0])

    def test_zero_persistence_is_independent(self):
        labels = label_chain(20_000, (0.2, 0.4, 0.5, 0.6, 0.8), 0.0, Rng(1))
        same = (labels[1:] == labels[:-1]).mean(axis=0)
        p = np.array([0.2, 0.4, 0.5, 0.6, 0.8])
        np.testing.assert_allclose(same, p**2 + (1 - p) ** 2, atol=0.02)

    def test_stationary_prevalence(self):
        p = np.array([0.15, 0.35, 0.10, 0.30, 0.45])
        n_chains, length = 4000, 6
        r = Rng(2)
        labels = np.stack([label_chain(length, p, 0.9, r.child(i)) for i in range(n_chains)])
        # chains start at stationarity, so every position has marginal p
        se = np.sqrt(p * (1 - p) / n_chains)
        for t in range(length):
            assert np.all(np.abs(labels[:, t].mean(axis=0) - p) < 3 * se + 1e-12)


class TestRender:
    def test_templates_disjoint_bands(self):
        t = templates(SynthConfig(image_size=(12, 4)))
        assert t.shape == (5, 12, 4)
        assert np.all(t.sum(axis=0) <= 1)
        assert t[2, 4:6].all() and not t[2, 6:].any()

    def test_noise_free_image_is_template_sum(self):
        cfg = SynthConfig(image_size=(10, 3), noise=0.0, amplitude=0.25)
        bits = [1, 0, 1, 0, 1]
        img = render_image(bits, cfg, Rng(0))
        np.testing.assert_array_equal(img, 0.25 * np.tensordot(np.array(bits, float), templates(cfg), axes=1))

    def test_clamped(self):
        img = render_image([1] * 5, SynthConfig(noise=5.0), Rng(1))
        assert img.min() >= 0 and img.max() <= 1


class TestGenerate:
    def test_csv_reparse_reproduces_ground_truth(self):
        cfg = SynthConfig(**SMALL, uncertain_fraction=0.4, lateral_fraction=0.3, seed=3)
        patients, images, text = generate(cfg)
        assert "-1.0" in text and "Lateral" in text
        scans = frontal_only(parse_chexpert_csv(io.StringIO(text)))
        truth = {s.path: tuple(s.labels) for p in patients for s in p.scans if s.view == "frontal"}
        assert {s.path: s.labels for s in scans} == truth
        assert set(images) == set(truth)

    def test_ages_strictly_increase(self):
        patients, _, _ = generate(SynthConfig(**SMALL))
        for p in patients:
            ages = [s.age for s in p.scans]
            assert all(b > a for a, b in zip(ages, ages[1:]))

    def test_images_shape_and_dtype(self):
        _, images, _ = generate(SynthConfig(**SMALL))
        img = next(iter(images.values()))
        assert img.shape == (1, 10, 6) and img.dtype == np.float32

    def test_curation_finds_histories(self):
        _, _, text = generate(SynthConfig(n_patients=30))
        dps = build_histories(frontal_only(parse_chexpert_csv(io.StringIO(text))), CurationConfig())
        assert dps and all(d.history for d in dps)

    def test_dataset_files_byte_identical(self, tmp_path):
        cfg = SynthConfig(**SMALL, uncertain_fraction=0.2, seed=5)
        gen_dataset(cfg, tmp_path / "a")
        gen_dataset(cfg, tmp_path / "b")
        names = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert names == ["ground_truth.json", "images.bin", "images.bin.index.json", "labels.csv", "synth_config.json"]
        for n in names:
            assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()

    def test_seed_changes_data(self):
        assert generate(SynthConfig(**SMALL, seed=1))[2] != generate(SynthConfig(**SMALL, seed=2))[2]

    @pytest.mark.parametrize("kw", [{"persistence": 1.5}, {"prevalence": (0.5,) * 4}, {"age_gap": (0, 1)},
                                    {"image_size": (4, 4)}, {"noise": -1.0}])
    def test_config_validation(self, kw):
        with pytest.raises(UsageError):
            SynthConfig(**kw)


class TestOracles:
    @pytest.mark.parametrize("rho", [0.0, 0.5, 0.9])
    def test_label_history_closed_form(self, rho):
        res = oracle_auroc(SynthConfig(persistence=rho), "label-history-Bayes", n_samples=100_000, seed=1)
        np.testing.assert_allclose(res["per_class"], (1 + rho) / 2, atol=0.012)

    def test_noise_free_images_are_perfect(self):
        res = oracle_auroc(SynthConfig(noise=0.0, image_size=(10, 4)), "image-only-Bayes", n_samples=5000)
        assert res["micro"] == 1.0

    def test_overwhelming_noise_is_chance(self):
        res = oracle_auroc(SynthConfig(noise=1e4, image_size=(10, 4)), "image-only-Bayes", n_samples=40_000)
        np.testing.assert_allclose(res["per_class"], 0.5, atol=0.02)

    def test_combined_dominates(self):
        cfg = SynthConfig(image_size=(10, 8))
        r = {k: oracle_auroc(cfg, k, n_samples=30_000)["micro"]
             for k in ("image-only-Bayes", "label-history-Bayes", "combined-Bayes")}
        assert r["combined-Bayes"] > max(r["image-only-Bayes"], r["label-history-Bayes"])

    def test_committed_calibration_gap(self):
        table = json.loads((Path(__file__).parents[1] / "configs" / "acceptance_calibration.json").read_text())
        gap = table["label-history-Bayes"]["micro"] - table["image-only-Bayes"]["micro"]
        assert gap >= 0.05

    def test_unknown_kind(self):
        with pytest.raises(UsageError):
            oracle_auroc(SynthConfig(), "oracle")


class TestTensorIO:
    def test_round_trip(self, tmp_path):
        r = Rng(0)
        tensors = {"a/b.jpg": r.random((1, 3, 4)).astype(np.float32), "c": r.random(5)}
        write_tensors(tmp_path / "t.bin", tensors)
        store = TensorStore(tmp_path / "t.bin")
        for k, v in tensors.items():
            got = store.get(k)
            assert got.dtype == v.dtype and np.array_equal(got, v)

    def test_record_layout(self):
        rec = encode_record(np.array([[1.0, 2.0]], dtype="<f8"))
        assert rec[:4] == b"CXTN" and rec[4] == 2 and rec[5] == 2
        assert np.array_equal(decode_record(rec, 0), [[1.0, 2.0]])

    def test_missing_key(self, tmp_path):
        write_tensors(tmp_path / "t.bin", {"x": np.zeros(2)})
        with pytest.raises(DataError, match="'y'"):
            TensorStore(tmp_path / "t.bin").get("y")
