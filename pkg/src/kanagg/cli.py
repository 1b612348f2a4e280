"""Command-line harness.

    kanagg sweep      --dataset m.json [...] [--runs N] [--iterations N] ...
    kanagg compare    --dataset m.json [...] [--variants kan kan-avg ...]
    kanagg adherence  --dataset m.json [...] [--variants ...]
    kanagg preprocess --dataset m.json [--seed N] [--out DIR]

A JSON file passed via --config supplies defaults; explicit flags win.
KANAGG_OUT sets the default output directory. Exit code is 0 only when
every run completed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .aggregators import AGGREGATOR_NAMES
from .data import load_table, preprocess, save_cached
from .harness import (VARIANTS, ExperimentConfig, _manifest_of, run_experiment,
                      write_report)

DEFAULT_OUT = os.environ.get("KANAGG_OUT", "kanagg-out")


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file with ExperimentConfig defaults")
    p.add_argument("--dataset", action="append", default=None,
                   metavar="MANIFEST", help="dataset manifest path (repeatable)")
    p.add_argument("--runs", type=int, default=None,
                   help="runs per (dataset, combination)")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--seed", type=int, default=None, help="global seed")
    p.add_argument("--variants", nargs="+", default=None,
                   choices=sorted(VARIANTS), help="compare/adherence variants")
    p.add_argument("--aggregators", nargs="+", default=None,
                   choices=AGGREGATOR_NAMES, help="sweep aggregator subset")
    p.add_argument("--strict-replication", action="store_true", default=None,
                   help="[n_in,10,1] head, squared-error loss, no feature scaling")
    p.add_argument("--out", default=None, help=f"output dir (default {DEFAULT_OUT})")
    p.add_argument("--parallelism", type=int, default=None,
                   help="worker processes (default 1)")


def _experiment_config(mode: str, args) -> ExperimentConfig:
    settings = {}
    if args.config:
        with open(args.config) as f:
            settings.update(json.load(f))
    overrides = {
        "datasets": args.dataset,
        "runs": args.runs,
        "iterations": args.iterations,
        "seed": args.seed,
        "variants": args.variants,
        "aggregators": args.aggregators,
        "strict_replication": args.strict_replication,
        "out_dir": args.out,
        "parallelism": args.parallelism,
    }
    settings.update({k: v for k, v in overrides.items() if v is not None})
    settings["mode"] = mode
    settings.setdefault("out_dir", str(Path(DEFAULT_OUT) / mode))
    for key in ("datasets", "variants", "aggregators"):
        if key in settings and settings[key] is not None:
            settings[key] = tuple(settings[key])
    config = ExperimentConfig(**settings)
    config.validate()
    return config


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="kanagg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for mode in ("sweep", "compare", "adherence"):
        _add_run_flags(sub.add_parser(mode))
    pre = sub.add_parser("preprocess")
    pre.add_argument("--dataset", action="append", required=True, metavar="MANIFEST")
    pre.add_argument("--seed", type=int, default=0)
    pre.add_argument("--strict-replication", action="store_true")
    pre.add_argument("--out", default=None)

    args = parser.parse_args(argv)
    if args.command == "preprocess":
        return _preprocess_main(args)

    config = _experiment_config(args.command, args)
    payload, records = run_experiment(config)
    out = write_report(payload, records, config.out_dir)
    print((out / "summary.txt").read_text(), end="")
    print(f"report written to {out}")
    failed = len(payload["failures"])
    if failed:
        print(f"{failed} run(s) failed", file=sys.stderr)
        return 1
    return 0


def _preprocess_main(args) -> int:
    out = Path(args.out or Path(DEFAULT_OUT) / "preprocessed")
    out.mkdir(parents=True, exist_ok=True)
    status = 0
    for source in args.dataset:
        manifest = _manifest_of(source)
        try:
            raw = load_table(manifest.path, manifest)
            data = preprocess(raw, manifest, args.seed,
                              scale_features=not args.strict_replication)
        except ValueError as exc:
            print(f"{manifest.name}: FAILED: {exc}", file=sys.stderr)
            status = 1
            continue
        target = out / f"{manifest.name}.npz"
        save_cached(data, target)
        sizes = (len(data.train_idx), len(data.val_idx), len(data.test_idx))
        print(f"{manifest.name}: {data.n_instances} rows -> "
              f"train/val/test {sizes}, {data.n_features} features, "
              f"{data.n_classes} classes -> {target}")
        for w in data.warnings:
            print(f"  warning: {w}")
    return status


if __name__ == "__main__":
    sys.exit(main())
