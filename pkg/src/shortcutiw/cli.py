"""Command-line entry points: run, inspect-iws, aggregate, synth-data.

Exit codes: 0 success, 2 invalid configuration or malformed/mismatched
inputs, 3 missing dataset files, 1 unexpected failure.
"""

from __future__ import annotations

import argparse
import glob as globlib
import json
import sys
from pathlib import Path

from .data import DataError, default_data_dir
from .experiment import (CONDITIONS, ConfigError, RESULT_SCHEMA_VERSION,
                         canonical_json, config_from_dict, run_experiment)
from .metrics import aggregate_runs, iw_distribution_report, write_aggregate_csv, write_iw_report_csv
from .shortcuts import read_manifest
from .synthdata import write_synthetic_cifar
from .weighting import read_iw_table


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def cmd_run(args) -> int:
    try:
        doc = json.loads(Path(args.config).read_text())
    except FileNotFoundError:
        return _fail(2, f"config file not found: {args.config}")
    except json.JSONDecodeError as e:
        return _fail(2, f"config is not valid JSON: {e}")
    if not isinstance(doc, dict):
        return _fail(2, "config must be a JSON object")
    if args.output_dir:
        doc["output_dir"] = args.output_dir
    if args.desk_scale:
        desk = doc.get("desk_scale", {})
        if isinstance(desk, bool):
            desk = {"enabled": desk}
        desk["enabled"] = True
        doc["desk_scale"] = desk
    try:
        cfg = config_from_dict(doc, data_dir_fallback=default_data_dir())
    except ConfigError as e:
        return _fail(2, f"invalid config: {e}")
    try:
        result = run_experiment(cfg)
    except FileNotFoundError as e:
        return _fail(3, str(e))
    except DataError as e:
        return _fail(3, f"bad dataset: {e}")
    for row in result["aggregates"]:
        print(f"{row['pair']} {row['shortcut_kind']} {row['condition']:>8}: "
              f"congruent {row['mean_acc_congruent']:.3f}  "
              f"incongruent {row['mean_acc_incongruent']:.3f}  "
              f"neutral {row['mean_acc_neutral']:.3f}  OB {row['mean_OB']:+.3f}")
    print(f"artifacts written to {cfg.output_dir}")
    return 0


def cmd_inspect_iws(args) -> int:
    try:
        table = read_iw_table(args.iws)
        manifest = read_manifest(args.manifest)
        report = iw_distribution_report(table, manifest)
    except FileNotFoundError as e:
        return _fail(2, str(e))
    except (ValueError, KeyError, DataError) as e:
        return _fail(2, str(e))
    out = args.out or (args.iws + ".report.csv")
    write_iw_report_csv(out, report)
    counts = report["counts"]
    print(f"{counts['shortcut']} shortcut / {counts['clean']} clean items")
    for q, shares in report["bottom_shares"].items():
        print(f"bottom {float(q):.0%} by weight: {shares['flagged_share_of_bottom']:.1%} shortcut items "
              f"(covers {shares['flagged_coverage']:.1%} of all shortcut items)")
    for group in ("shortcut", "clean"):
        qs = report["quantiles"][group]
        if qs:
            line = ", ".join(f"q{float(k) * 100:g}={v:.4f}" for k, v in qs.items())
            print(f"{group} weight quantiles: {line}")
    print(f"histogram written to {out}")
    return 0


def cmd_aggregate(args) -> int:
    paths = sorted(globlib.glob(args.glob, recursive=True))
    if not paths:
        return _fail(2, f"no result files match {args.glob!r}")
    records = []
    for path in paths:
        try:
            rows = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            return _fail(2, f"{path}: {e}")
        for row in rows if isinstance(rows, list) else [rows]:
            if row.get("schema_version") != RESULT_SCHEMA_VERSION:
                return _fail(2, f"{path}: schema version {row.get('schema_version')} "
                                f"!= {RESULT_SCHEMA_VERSION}")
            records.append(row)
    rows = aggregate_runs(records)
    write_aggregate_csv(args.out, rows)
    print(f"aggregated {len(records)} records from {len(paths)} files into {args.out}")
    return 0


def cmd_synth_data(args) -> int:
    classes = tuple(int(c) for c in args.classes.split(","))
    write_synthetic_cifar(args.data_dir, classes=classes,
                          train_per_class=args.train_per_class,
                          test_per_class=args.test_per_class, seed=args.seed)
    print(f"synthetic CIFAR-format data for classes {classes} written to {args.data_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shortcutiw",
        description="Two-stage importance-weighted training against shortcut reliance.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a full experiment from a JSON config")
    p.add_argument("--config", required=True, help="path to the experiment config JSON")
    p.add_argument("--output-dir", help="override the config's output_dir")
    p.add_argument("--desk-scale", action="store_true",
                   help="force the reduced desk-scale protocol")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("inspect-iws", help="histogram an importance-weight file")
    p.add_argument("--iws", required=True, help="IW CSV written by a run")
    p.add_argument("--manifest", required=True, help="injection manifest CSV of the same run")
    p.add_argument("--out", help="report CSV path (default: <iws>.report.csv)")
    p.set_defaults(func=cmd_inspect_iws)

    p = sub.add_parser("aggregate", help="aggregate result JSON files into a CSV")
    p.add_argument("--glob", required=True, help="glob pattern for result.json files")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("synth-data", help="generate CIFAR-format synthetic data")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--classes", default="1,6", help="comma-separated class ids (default 1,6)")
    p.add_argument("--train-per-class", type=int, default=5000)
    p.add_argument("--test-per-class", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
