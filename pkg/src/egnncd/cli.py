"""``egnncd`` command line: stats, gen, crossval, ablate, sweep, compare.

Exit codes: 0 success, 1 validation error, 2 runtime or numerical error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .data import DataError
from .experiment import (cmd_ablate, cmd_compare, cmd_crossval, cmd_gen, cmd_stats, cmd_sweep,
                         load_config, load_synth_spec)
from .metrics import METRICS, ComparisonTable
from .synth import SynthSpec

VARIANT_NAMES = {1: "EGNN-CD-1", 2: "EGNN-CD-2", 3: "EGNN-CD-3", 4: "EGNN-CD"}


def _common(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, help="fold and training seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--model", choices=["egnn", "irt", "mirt", "pmf", "dina"])
    p.add_argument("--variant", type=int, choices=[1, 2, 3, 4])
    p.add_argument("--gate", choices=["literal", "norm"])
    p.add_argument("--jobs", type=int, help="parallel fold workers")
    p.add_argument("--synth", action="store_true", help="use the synthetic benchmark from the config")


def build_parser():
    parser = argparse.ArgumentParser(prog="egnncd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="print dataset properties")
    p.add_argument("data", help="directory holding logs.csv and q.csv, or a log CSV")
    p.add_argument("--qmatrix", help="Q-matrix CSV (when DATA is a log file)")

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--config", help="synthetic spec file (key = value)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    for name in ("crossval", "ablate"):
        _common(sub.add_parser(name))

    p = sub.add_parser("sweep", help="dimension or layer-count sweep")
    _common(p)
    p.add_argument("--axis", required=True, choices=["dim", "d", "layers", "l"])
    p.add_argument("--values", required=True, help="comma-separated values")

    p = sub.add_parser("compare", help="cross-validate several models on shared folds")
    _common(p)
    p.add_argument("--models", help="comma-separated model list; first is the reference")
    p.add_argument("--table", help="score a ready-made dataset,metric,<models...> CSV instead")
    return parser


def _experiment_config(args):
    overrides = {
        "seed": args.seed, "out": args.out, "model": args.model, "variant": args.variant,
        "gate_mode": args.gate, "jobs": args.jobs,
    }
    if getattr(args, "synth", False):
        overrides["synth"] = True
    if getattr(args, "models", None):
        overrides["models"] = args.models
    return load_config(args.config, **overrides)


def _summary(rec):
    return "  ".join(f"{m}={rec.mean[m]:.4f}" for m in METRICS)


def run(args):
    if args.command == "stats":
        data = Path(args.data)
        if data.is_dir():
            logs, q = data / "logs.csv", data / "q.csv"
        else:
            if not args.qmatrix:
                raise ValueError("stats on a log file needs --qmatrix")
            logs, q = data, Path(args.qmatrix)
        _, text = cmd_stats(logs, q, name=data.stem if data.is_file() else data.name)
        print(text)
    elif args.command == "gen":
        spec = load_synth_spec(args.config) if args.config else SynthSpec()
        if args.seed is not None:
            spec = SynthSpec(**{**spec.__dict__, "seed": args.seed})
        for path in cmd_gen(spec, args.out):
            print(path)
    elif args.command == "crossval":
        cfg = _experiment_config(args)
        rec = cmd_crossval(cfg)
        print(f"{rec.model} on {rec.dataset}: {_summary(rec)}")
    elif args.command == "ablate":
        cfg = _experiment_config(args)
        for v, rec in cmd_ablate(cfg).items():
            print(f"{VARIANT_NAMES[v]:<10} {_summary(rec)}")
    elif args.command == "sweep":
        cfg = _experiment_config(args)
        values = [v for v in args.values.split(",") if v.strip()]
        for val, rec in cmd_sweep(cfg, args.axis, values).items():
            print(f"{args.axis}={val:<5} {_summary(rec)}")
    elif args.command == "compare":
        if args.table:
            table = ComparisonTable.from_csv(args.table).compute()
            table.write(args.out or ".")
        else:
            cfg = _experiment_config(args)
            table = cmd_compare(cfg)
        print(json.dumps({"win_tie_loss": table.wtl, "wilcoxon_p": table.p_values,
                          "mean_rank": table.mean_ranks}, indent=1))
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except (DataError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ArithmeticError, RuntimeError, MemoryError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
