"""5-fold comparison of EGNN-CD and the baselines on the synthetic DINA benchmark.

    python3 scripts/run_benchmark.py --out runs/benchmark [--models egnn,dina,pmf,irt,mirt]

Writes one run record per model plus comparison.{json,csv}; prints a
per-model metric table. The full run takes about six minutes on one core.
"""
import argparse
import json
from pathlib import Path

from egnncd.data import make_folds
from egnncd.experiment import build_dataset, compare_records, crossval, load_config
from egnncd.metrics import METRICS


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="flat key = value experiment config")
    ap.add_argument("--models", default="egnn,dina,pmf,irt,mirt")
    ap.add_argument("--out", default="runs/benchmark")
    args = ap.parse_args()

    cfg = load_config(args.config, synth=True, out=args.out)
    ds, name = build_dataset(cfg)
    plan = make_folds(ds, cfg.folds, cfg.seed)
    records = {}
    print(f"{'model':<6} " + " ".join(f"{m:>7}" for m in METRICS) + "   seconds")
    for kind in args.models.split(","):
        rec = crossval(ds, name, kind, cfg, plan=plan, out_dir=Path(args.out) / kind)
        records[kind] = rec
        print(f"{kind:<6} " + " ".join(f"{rec.mean[m]:7.4f}" for m in METRICS) + f"   {rec.wall_clock_s:7.1f}",
              flush=True)
    table = compare_records(records)
    table.write(args.out)
    print(json.dumps({"win_tie_loss": table.wtl, "mean_rank": table.mean_ranks}, indent=1))


if __name__ == "__main__":
    main()
