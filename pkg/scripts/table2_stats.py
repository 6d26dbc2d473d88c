"""Win/tie/loss, Wilcoxon p-values and Friedman mean ranks for a published
comparison matrix (dataset,metric,<models...> CSV; first model is the reference).

    python3 scripts/table2_stats.py [tests/data/table2.csv] [--epsilon 1e-4]
"""
import argparse
from pathlib import Path

import numpy as np

from egnncd.metrics import ComparisonTable, friedman_test

DEFAULT = Path(__file__).resolve().parent.parent / "tests" / "data" / "table2.csv"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("table", nargs="?", default=str(DEFAULT))
    ap.add_argument("--epsilon", type=float, default=1e-4)
    args = ap.parse_args()

    t = ComparisonTable.from_csv(args.table, epsilon=args.epsilon).compute()
    ref = t.models[0]
    print(f"{'model':<10} {'W/T/L':>9} {'wilcoxon p':>11} {'mean rank':>10}")
    print(f"{ref:<10} {'/'.join(map(str, t.wtl['total'])):>9} {'':>11} {t.mean_ranks[ref]:10.4f}")
    for m in t.models[1:]:
        p = t.p_values[m]
        print(f"{m:<10} {'/'.join(map(str, t.wtl[m])):>9} {'-' if p is None else f'{p:.3g}':>11} "
              f"{t.mean_ranks[m]:10.4f}")
    v = np.asarray(t.values)
    print("\ncells where the reference loses:")
    for i, row in enumerate(t.rows):
        for j, m in enumerate(t.models[1:], 1):
            if v[i, 0] < v[i, j] - args.epsilon:
                print(f"  {row[0]}-{row[1]}: {ref} {v[i, 0]:.4f} < {m} {v[i, j]:.4f}")
    stat, p = friedman_test(v)
    print(f"\nFriedman chi2 = {stat:.3f}, p = {p:.3g}")


if __name__ == "__main__":
    main()
