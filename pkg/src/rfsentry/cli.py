"""Command-line front end: synth, features, train, cv, compare, predict.

Every command is deterministic given its flags and seeds, and every
artifact it writes embeds the fully-resolved configuration that
produced it. Exit codes: 0 success, 2 configuration problems, 3 data
problems, 4 I/O failures.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import dataset as dataset_mod
from . import evaluation, gbdt
from .dataset import Case, LabelSchema
from .errors import ConfigurationError, RfSentryError
from .spectrum import BandMode

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_IO = 4

_BAND_CHOICES = {"lower": BandMode.LOWER_ONLY, "upper": BandMode.UPPER_ONLY, "both": BandMode.CONCATENATED}


def _extraction_args(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("feature extraction")
    group.add_argument("--frame-size", type=int, default=2048, help="analysis frame length N")
    group.add_argument("--hop", type=int, default=None, help="frame hop (default: frame size)")
    group.add_argument("--q", type=int, default=8, help="boundary bins for the seam scale factor")
    group.add_argument(
        "--window", choices=("rectangular", "hann"), default="rectangular", help="analysis window"
    )


def _train_args(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("training")
    group.add_argument("--rounds", type=int, default=100, help="boosting rounds")
    group.add_argument("--eta", type=float, default=0.3, help="learning rate")
    group.add_argument("--max-depth", type=int, default=6, help="maximum tree depth")
    group.add_argument("--lambda", dest="reg_lambda", type=float, default=1.0, help="L2 leaf penalty")
    group.add_argument("--gamma", type=float, default=0.0, help="per-leaf split penalty")
    group.add_argument("--min-child-weight", type=float, default=1.0, help="minimum child hessian sum")
    group.add_argument("--seed-train", type=int, default=0, help="training seed")


def _case_arg(parser: argparse.ArgumentParser, required: bool = True) -> None:
    parser.add_argument(
        "--case",
        type=int,
        choices=(1, 2, 3),
        required=required,
        default=None if required else argparse.SUPPRESS,
        help="classification case: 1 presence, 2 presence+type, 3 presence+type+mode",
    )


def _train_config(args, n_classes: int) -> gbdt.TrainConfig:
    return gbdt.TrainConfig(
        n_rounds=args.rounds,
        learning_rate=args.eta,
        max_depth=args.max_depth,
        reg_lambda=args.reg_lambda,
        gamma=args.gamma,
        min_child_weight=args.min_child_weight,
        n_classes=n_classes,
        seed=args.seed_train,
    )


def _extraction_config(args) -> dict:
    return {
        "frame_size": args.frame_size,
        "hop": args.hop if args.hop is not None else args.frame_size,
        "q": args.q,
        "window": args.window,
    }


def _write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_metric_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["case", "band_mode", "fold", "metric", "value"])
        writer.writerows(rows)


def cmd_synth(args) -> int:
    manifest = dataset_mod.write_synthetic_corpus(
        args.out_dir, n_per_class=args.n_per_class, seed=args.seed_data, length=args.length
    )
    print(f"wrote {len(manifest.entries)} segment pairs to {args.out_dir}")
    print(f"manifest: {Path(args.out_dir) / 'manifest.json'}")
    return EXIT_OK


def _print_class_table(manifest: dataset_mod.Manifest) -> None:
    print(f"{'class':<16}{'segments':>10}{'expected':>10}")
    for name, observed, expected in manifest.table_report():
        expected_text = "-" if expected is None else str(expected)
        print(f"{name:<16}{observed:>10}{expected_text:>10}")
    print(f"{'total':<16}{sum(manifest.class_counts()):>10}")


def cmd_features(args) -> int:
    manifest = dataset_mod.load_manifest(args.manifest)
    band_mode = _BAND_CHOICES[args.band]
    case = Case(args.case)
    ds = dataset_mod.build_dataset(
        manifest,
        band_mode,
        case,
        frame_size=args.frame_size,
        hop=args.hop,
        q=args.q,
        window=args.window,
        jobs=args.jobs,
    )
    dataset_mod.save_features(ds, args.out)
    _print_class_table(manifest)
    print(
        f"features: {ds.n_rows} rows x {ds.n_features} dims "
        f"({band_mode.value} band, case {case.value}) -> {args.out}"
    )
    return EXIT_OK


def _load_features_for_case(path, case_value) -> dataset_mod.LabeledDataset:
    ds = dataset_mod.load_features(path)
    if case_value is not None and ds.schema.case.value != case_value:
        raise ConfigurationError(
            f"feature cache {path} holds case {ds.schema.case.value} labels, "
            f"but case {case_value} was requested"
        )
    return ds


def cmd_cv(args) -> int:
    ds = _load_features_for_case(args.features, args.case)
    config = _train_config(args, ds.schema.n_classes)
    report = evaluation.cross_validate(ds, config, k=args.k_folds, seed=args.seed_data, jobs=args.jobs)
    payload = report.to_dict()
    payload["case"] = ds.schema.case.value
    payload["band_mode"] = ds.band_mode.value
    payload["extraction"] = {"frame_size": ds.frame_size, "hop": ds.hop, "q": ds.q}
    _write_json(args.out, payload)
    csv_path = Path(args.out).with_suffix(".csv")
    _write_metric_csv(
        csv_path,
        evaluation.metric_csv_rows({ds.band_mode.value: report}, ds.schema.case.value),
    )
    print(
        f"case {ds.schema.case.value} {ds.band_mode.value}: "
        f"accuracy {report.mean['accuracy']:.4f} +- {report.std['accuracy']:.4f} "
        f"over {report.k} folds -> {args.out}"
    )
    return EXIT_OK


def _format_ttest(name: str, result) -> str:
    verdict = "rejected" if result.rejected else "not rejected"
    return (
        f"{name}: mean diff {result.mean_diff:+.4f}, t={result.t_stat:.3f} "
        f"(dof {result.dof}), CI [{result.ci_low:.4f}, {result.ci_high:.4f}], {verdict}"
    )


def cmd_compare(args) -> int:
    manifest = dataset_mod.load_manifest(args.manifest)
    case = Case(args.case)
    config = _train_config(args, LabelSchema.for_case(case).n_classes)
    comparison = evaluation.compare_bands(
        manifest,
        case,
        config,
        k=args.k_folds,
        seed=args.seed_data,
        alpha=args.alpha,
        frame_size=args.frame_size,
        hop=args.hop,
        q=args.q,
        window=args.window,
        jobs=args.jobs,
    )
    payload = comparison.to_dict()
    payload["extraction"] = _extraction_config(args)
    _write_json(args.out, payload)
    csv_path = Path(args.out).with_suffix(".csv")
    _write_metric_csv(
        csv_path,
        evaluation.metric_csv_rows(
            {mode.value: rep for mode, rep in comparison.reports.items()}, case.value
        ),
    )
    for mode, report in comparison.reports.items():
        print(
            f"case {case.value} {mode.value}: accuracy "
            f"{report.mean['accuracy']:.4f} +- {report.std['accuracy']:.4f}"
        )
    print(_format_ttest("LB vs UB", comparison.lb_vs_ub))
    print(_format_ttest("LB vs both", comparison.lb_vs_both))
    print(f"report -> {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    ds = _load_features_for_case(args.features, args.case)
    config = _train_config(args, ds.schema.n_classes)
    model = gbdt.train(ds.features, ds.labels, config)
    gbdt.save_model(model, args.out)
    print(
        f"trained {len(model.trees)} trees ({config.n_rounds} rounds, "
        f"{ds.schema.n_classes} classes) on {ds.n_rows} rows -> {args.out}"
    )
    if model.objective_history:
        print(f"final training objective: {model.objective_history[-1]:.6f}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = gbdt.load_model(args.model)
    schema = LabelSchema.for_n_classes(model.config.n_classes)
    if args.features is not None:
        ds = dataset_mod.load_features(args.features)
        features = ds.features
        source = str(args.features)
    else:
        if args.lb is None and args.ub is None:
            raise ConfigurationError("predict needs --features, or --lb/--ub segment files")
        band_mode = _BAND_CHOICES[args.band]
        if band_mode in (BandMode.LOWER_ONLY, BandMode.CONCATENATED) and args.lb is None:
            raise ConfigurationError(f"--band {args.band} requires --lb")
        if band_mode in (BandMode.UPPER_ONLY, BandMode.CONCATENATED) and args.ub is None:
            raise ConfigurationError(f"--band {args.band} requires --ub")
        hop = args.hop if args.hop is not None else args.frame_size
        task = (
            0,
            "cli-input",
            str(args.lb),
            str(args.ub),
            band_mode.value,
            args.frame_size,
            hop,
            args.q,
            args.window,
        )
        _, values = dataset_mod._extract_entry(task)
        features = values[None, :]
        source = str(args.lb or args.ub)
    probs = gbdt.predict_proba(model, features)
    labels = np.argmax(probs, axis=1)
    for i, (label, row) in enumerate(zip(labels, probs)):
        listed = " ".join(f"{value:.4f}" for value in row)
        print(f"row {i}: {schema.class_names[label]} (class {label})  probs=[{listed}]")
    if args.out:
        payload = {
            "model": str(args.model),
            "input": source,
            "config": dataclasses.asdict(model.config),
            "case": schema.case.value,
            "class_names": list(schema.class_names),
            "labels": labels.tolist(),
            "probabilities": probs.tolist(),
        }
        _write_json(args.out, payload)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rfsentry",
        description="RF drone detection and identification from signal-strength spectra",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    p.add_argument("--out-dir", required=True, help="directory for segment files and manifest")
    p.add_argument("--n-per-class", type=int, default=10, help="segments per 10-way class")
    p.add_argument("--seed-data", type=int, default=0, help="corpus seed")
    p.add_argument("--length", type=int, default=dataset_mod.SYNTH_DEFAULT_LENGTH, help="samples per segment")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("features", help="extract a feature cache from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--band", choices=tuple(_BAND_CHOICES), default="lower")
    _case_arg(p)
    _extraction_args(p)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="feature cache path")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("cv", help="stratified K-fold cross-validation on a feature cache")
    p.add_argument("--features", required=True, help="feature cache path")
    p.add_argument("--case", type=int, choices=(1, 2, 3), default=None, help="expected case (validated)")
    _train_args(p)
    p.add_argument("--k-folds", type=int, default=10)
    p.add_argument("--seed-data", type=int, default=0, help="fold-assignment seed")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="report JSON path (CSV written alongside)")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("compare", help="lower/upper/both band comparison with paired t-tests")
    p.add_argument("--manifest", required=True)
    _case_arg(p)
    _extraction_args(p)
    _train_args(p)
    p.add_argument("--k-folds", type=int, default=10)
    p.add_argument("--alpha", type=float, default=0.05, help="t-test significance level")
    p.add_argument("--seed-data", type=int, default=0, help="fold-assignment seed")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="report JSON path (CSV written alongside)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("train", help="train a model on a full feature cache")
    p.add_argument("--features", required=True)
    p.add_argument("--case", type=int, choices=(1, 2, 3), default=None, help="expected case (validated)")
    _train_args(p)
    p.add_argument("--out", required=True, help="model file path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="classify a feature cache or a raw segment pair")
    p.add_argument("--model", required=True)
    p.add_argument("--features", default=None, help="feature cache to classify")
    p.add_argument("--lb", default=None, help="lower-band segment file")
    p.add_argument("--ub", default=None, help="upper-band segment file")
    p.add_argument("--band", choices=tuple(_BAND_CHOICES), default="lower")
    _extraction_args(p)
    p.add_argument("--out", default=None, help="optional JSON output path")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("RF_SENTRY_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except RfSentryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
