"""Command-line entry point.

Every command prints a one-line JSON summary on stdout. Exit codes: 0 success,
1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .curate import (SPLIT_NAMES, build_histories, compute_stats, format_stats_table, frontal_only,
                     full_stats, parse_chexpert_csv, read_datapoints, split_by_patient, write_datapoints)
from .errors import ChexHistoryError, DataError, NumericalError, UsageError
from .evaluate import (MetricsReport, ScoredSet, compare_reports, evaluate_scores, format_comparison,
                       read_scores, write_scores)
from .models import Batch, HistoryClassifier, Variant, toy_gradient_check
from .ndcore.rng import Rng
from .synth import calibration_table, gen_dataset
from .tensorio import TensorStore
from .train import ImageProvider, PreprocessConfig, fit, predict_dataset, write_epoch_logs

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _emit(summary: dict) -> None:
    print(json.dumps(summary, sort_keys=True, default=_jsonable))


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, Path):
        return str(v)
    raise TypeError(f"not JSON serializable: {type(v)}")


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2, default=_jsonable) + "\n")


def _ratios(text: str) -> tuple:
    try:
        vals = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise UsageError(f"--split expects three comma-separated fractions, got {text!r}") from None
    if len(vals) != 3:
        raise UsageError(f"--split expects three fractions, got {len(vals)}")
    return vals


# --------------------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    doc = cfgmod.load_config(args.config)
    cfg = cfgmod.synth_config(doc, seed=args.seed, n_patients=args.n_patients)
    summary = gen_dataset(cfg, args.out)
    if args.calibrate:
        table = calibration_table(cfg, n_samples=args.samples)
        _write_json(Path(args.out) / "calibration.json", table)
        summary["calibration_micro"] = {k: v["micro"] for k, v in table.items()}
    _emit({"command": "synth", **summary})
    return EXIT_OK


def cmd_curate(args) -> int:
    doc = cfgmod.load_config(args.config)
    cfg = cfgmod.curation_config(doc, max_age_diff=args.max_age_diff, min_images=args.min_images,
                                 split_ratios=_ratios(args.split) if args.split else None,
                                 split_seed=args.seed, age_window=args.age_window)
    scans = frontal_only(parse_chexpert_csv(args.csv))
    dps = build_histories(scans, cfg)
    splits = split_by_patient(dps, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name in SPLIT_NAMES:
        write_datapoints(out / f"{name}.jsonl", splits[name])
        rows.append(compute_stats(splits[name], name))
    rows.append(full_stats(scans))
    _write_json(out / "stats.json", {"config": asdict(cfg), "splits": [r.to_json() for r in rows]})
    (out / "stats.txt").write_text(format_stats_table(rows) + "\n")
    _emit({"command": "curate", "frontal_scans": len(scans), "datapoints": len(dps),
           **{f"{n}_datapoints": len(splits[n]) for n in SPLIT_NAMES}, "out": str(out)})
    return EXIT_OK


def cmd_stats(args) -> int:
    rows = [compute_stats(read_datapoints(p), Path(p).stem) for p in args.datapoints]
    if args.csv:
        rows.append(full_stats(frontal_only(parse_chexpert_csv(args.csv))))
    print(format_stats_table(rows), file=sys.stderr if args.quiet_table else sys.stdout)
    doc = {"splits": [r.to_json() for r in rows]}
    if args.json:
        _write_json(args.json, doc)
    _emit({"command": "stats", **doc})
    return EXIT_OK


def _train_paths(doc, args) -> dict:
    data = dict(doc.get("data") or {})
    for key in ("train", "valid", "images"):
        flag = getattr(args, f"{key}_data" if key != "images" else "images")
        if flag:
            data[key] = flag
    missing = [k for k in ("train", "valid", "images") if not data.get(k)]
    if missing:
        raise UsageError(f"missing data paths {missing}; set [data] in the config or pass flags")
    return data


def cmd_train(args) -> int:
    doc = cfgmod.load_config(args.config)
    variant = Variant.parse(args.variant)
    enc, head = cfgmod.model_configs(doc)
    prep = cfgmod.preprocess_config(doc)
    tcfg = cfgmod.train_config(doc, seed=args.seed, max_epochs=args.max_epochs)
    data = _train_paths(doc, args)
    train_dps, valid_dps = read_datapoints(data["train"]), read_datapoints(data["valid"])
    model = HistoryClassifier(variant, enc, head, rng=Rng(tcfg.seed).child(0))
    store = TensorStore(data["images"]) if variant.uses_images else None
    provider = ImageProvider(store, model, prep) if store is not None else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    logs_path = out / "epochs.jsonl"
    logs_path.write_text("")

    def on_epoch(log):
        with open(logs_path, "a") as fh:
            fh.write(json.dumps(log.to_json(), sort_keys=True) + "\n")
        if args.verbose:
            print(f"epoch {log.epoch}: train {log.train_loss:.4f} valid {log.valid_loss:.4f} lr {log.lr:.1e}",
                  file=sys.stderr)

    result = fit(model, train_dps, valid_dps, provider, tcfg, on_epoch=on_epoch)
    write_epoch_logs(logs_path, result.logs)
    extra = {"preprocess": asdict(prep), "train": asdict(tcfg), "images": str(data["images"]),
             "best_epoch": result.best_epoch, "best_valid_loss": result.best_valid_loss}
    model.save(out / "checkpoint.bin", extra)
    _emit({"command": "train", "variant": variant.value, "best_epoch": result.best_epoch,
           "best_valid_loss": result.best_valid_loss, "epochs": len(result.logs),
           "checkpoint": str(out / "checkpoint.bin")})
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.scores_in:
        scored = read_scores(args.scores_in)
        variant = args.variant or "unknown"
    else:
        if not (args.checkpoint and args.split):
            raise UsageError("eval needs --checkpoint and --split (or --scores-in)")
        model, ck = HistoryClassifier.load(args.checkpoint)
        variant = model.variant.value
        dps = read_datapoints(args.split)
        if not dps:
            raise DataError(f"split file {args.split} has no datapoints")
        provider = None
        if model.variant.uses_images:
            images = args.images or ck.get("images")
            if not images:
                raise UsageError("no --images given and the checkpoint does not record an images file")
            provider = ImageProvider(TensorStore(images), model, PreprocessConfig(**ck.get("preprocess", {})))
        probs = predict_dataset(model, dps, provider)
        scored = ScoredSet(probs, np.array([d.target.labels for d in dps]), [d.target.path for d in dps])
    split_name = args.split_name or (Path(args.split).stem if args.split else "split")
    report = evaluate_scores(scored, variant, split_name, args.bootstrap, args.seed)
    if all(math.isnan(v) for v in report.point.values()):
        raise NumericalError("AUROC undefined for every class (single-class labels)")
    if args.out:
        _write_json(args.out, report.to_json())
    if args.scores_out:
        write_scores(args.scores_out, scored)
    _emit({"command": "eval", "variant": variant, "split": split_name, "n": len(scored),
           "mean": report.bootstrap.mean, "std": report.bootstrap.std})
    return EXIT_OK


def cmd_compare(args) -> int:
    reports = []
    for p in args.reports:
        try:
            reports.append(MetricsReport.from_json(json.loads(Path(p).read_text())))
        except FileNotFoundError:
            raise DataError(f"report not found: {p}") from None
        except (KeyError, ValueError) as e:
            raise DataError(f"malformed report {p}: {e}") from None
    table = compare_reports(reports)
    text = format_comparison(table)
    if args.out:
        _write_json(args.out, table)
    if args.text:
        Path(args.text).write_text(text + "\n")
    print(text, file=sys.stderr)
    _emit({"command": "compare", **table})
    return EXIT_OK


def _parse_dims(text: str) -> tuple[int, int, int, int]:
    try:
        dims = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise UsageError(f"--dims expects latent,hidden,seq_len,batch, got {text!r}") from None
    if len(dims) != 4 or min(dims) < 1:
        raise UsageError("--dims expects four positive integers: latent,hidden,seq_len,batch")
    return dims


def cmd_gradcheck(args) -> int:
    latent, hidden, seq_len, batch_size = _parse_dims(args.dims)
    variant = Variant.parse(args.variant)
    report, model = toy_gradient_check(variant, latent, hidden, seq_len, batch_size,
                                       args.encoder, args.seed, args.tolerance)
    _emit({"command": "gradcheck", "variant": variant.value, "passed": report.passed,
           "worst_rel_err": report.worst, "tolerance": args.tolerance,
           "n_params": int(sum(p.value.size for p in model.parameters().values())),
           "max_rel_err": report.max_rel_err})
    return EXIT_OK if report.passed else EXIT_NUMERIC


# --------------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="chexhistory", description="Patient-history chest X-ray pipeline")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic longitudinal dataset")
    s.add_argument("--config", help="YAML config with a [synth] section")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int)
    s.add_argument("--n-patients", type=int)
    s.add_argument("--calibrate", action="store_true", help="also write Monte-Carlo Bayes AUROCs")
    s.add_argument("--samples", type=int, default=100_000, help="Monte-Carlo samples for --calibrate")
    s.set_defaults(func=cmd_synth)

    c = sub.add_parser("curate", help="build patient-history datapoints and split by patient")
    c.add_argument("--csv", required=True, help="CheXpert-format CSV")
    c.add_argument("--config", help="YAML config with a [curate] section")
    c.add_argument("--max-age-diff", type=int, default=None, help="years (default 3)")
    c.add_argument("--min-images", type=int, default=None, help="minimum history length (default 1)")
    c.add_argument("--split", default=None, help="train,valid,test fractions (default 0.8,0.1,0.1)")
    c.add_argument("--seed", type=int, default=None, help="patient shuffle seed (default 0)")
    c.add_argument("--age-window", choices=["inclusive", "exclusive"], default=None)
    c.add_argument("--out", required=True, help="output directory")
    c.set_defaults(func=cmd_curate)

    st = sub.add_parser("stats", help="dataset statistics table")
    st.add_argument("--datapoints", nargs="+", required=True, help="datapoint JSON-lines files")
    st.add_argument("--csv", help="CheXpert CSV for the unrestricted 'full' row")
    st.add_argument("--json", help="write statistics JSON here")
    st.add_argument("--quiet-table", action="store_true", help="print the table to stderr")
    st.set_defaults(func=cmd_stats)

    t = sub.add_parser("train", help="train one model variant")
    t.add_argument("--variant", required=True, choices=[v.value for v in Variant])
    t.add_argument("--config", help="YAML config with [data], [model], [preprocess], [train]")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--seed", type=int)
    t.add_argument("--max-epochs", type=int)
    t.add_argument("--train-data", help="train datapoints JSON-lines")
    t.add_argument("--valid-data", help="validation datapoints JSON-lines")
    t.add_argument("--images", help="image tensor file")
    t.add_argument("--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="AUROC with Poisson bootstrap for one split")
    e.add_argument("--checkpoint")
    e.add_argument("--split", help="datapoints JSON-lines to score")
    e.add_argument("--split-name", help="name used in reports (default: file stem)")
    e.add_argument("--images", help="image tensor file (default: recorded in checkpoint)")
    e.add_argument("--scores-in", help="evaluate an existing scores JSON-lines file instead")
    e.add_argument("--variant", help="variant name for --scores-in reports")
    e.add_argument("--bootstrap", type=int, default=10, help="number of Poisson resamples")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", help="write the metrics report JSON here")
    e.add_argument("--scores-out", help="write per-datapoint scores JSON-lines here")
    e.set_defaults(func=cmd_eval)

    cp = sub.add_parser("compare", help="variants x (split, metric) comparison table")
    cp.add_argument("--reports", nargs="+", required=True)
    cp.add_argument("--out", help="write table JSON here")
    cp.add_argument("--text", help="write aligned text table here")
    cp.set_defaults(func=cmd_compare)

    g = sub.add_parser("gradcheck", help="finite-difference check of a variant's gradients")
    g.add_argument("--variant", required=True, choices=[v.value for v in Variant])
    g.add_argument("--dims", default="8,12,4,2", help="latent,hidden,seq_len,batch")
    g.add_argument("--encoder", choices=["mlp", "small_cnn", "precomputed"], default="mlp")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tolerance", type=float, default=1e-5)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ChexHistoryError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
