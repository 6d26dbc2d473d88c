"""Variant ablation plus dimension and layer sweeps on one benchmark.

    python3 scripts/ablation_and_sweeps.py --out runs/figures [--dims 10,32,64,128] [--layers 1,2,3,4]

Produces fig3.csv (variants), fig4.csv (dimension d) and fig5.csv (layers l)
under ``--out``; every run shares the same fold assignment.
"""
import argparse

from egnncd.experiment import cmd_ablate, cmd_sweep, load_config
from egnncd.metrics import METRICS


def _show(title, records):
    print(f"\n{title}")
    for key, rec in records.items():
        print(f"  {str(key):<6} " + "  ".join(f"{m}={rec.mean[m]:.4f}" for m in METRICS), flush=True)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="flat key = value experiment config")
    ap.add_argument("--out", default="runs/figures")
    ap.add_argument("--dims", default="10,32,64,128")
    ap.add_argument("--layers", default="1,2,3,4")
    ap.add_argument("--skip-ablation", action="store_true")
    args = ap.parse_args()

    cfg = load_config(args.config, synth=True, out=args.out)
    if not args.skip_ablation:
        _show("variants (fig3.csv)", cmd_ablate(cfg))
    for axis, values in (("dim", args.dims), ("layers", args.layers)):
        if values:
            _show(f"{axis} sweep", cmd_sweep(cfg, axis, values.split(",")))


if __name__ == "__main__":
    main()
