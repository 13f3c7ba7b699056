"""Min-entropy against CHSH value for uniform and fixed inputs (CSV).

Columns: v, uniform and fixed min-entropy in bits, and their ratio.
"""
import argparse
import csv
import math
import sys

import numpy as np

from randcert import CHSH_SCENARIO, InputDistribution, chsh_expression
from randcert.programs import guessing_from_violation


def curve(level, grid):
    expr = chsh_expression()
    uni = InputDistribution.uniform(CHSH_SCENARIO)
    fix = InputDistribution.point(CHSH_SCENARIO, 0, 0)
    for v in grid:
        if v <= 2.0:
            yield v, 0.0, 0.0
            continue
        hu = guessing_from_violation(expr, v, uni, level).min_entropy
        hf = guessing_from_violation(expr, v, fix, level).min_entropy
        yield v, hu, hf


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--level", default="local-1", choices=("local-1", "npa-2", "ns"))
    ap.add_argument("--points", type=int, default=15)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    vmax = 4.0 if args.level == "ns" else 2 * math.sqrt(2)
    grid = np.linspace(2.0, vmax, args.points)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    w = csv.writer(fh)
    w.writerow(["v", "H_uniform", "H_fixed", "ratio"])
    w.writerow(["dimensionless", "bits", "bits", "dimensionless"])
    for v, hu, hf in curve(args.level, grid):
        w.writerow([f"{v:.6f}", f"{hu:.8f}", f"{hf:.8f}", f"{hu / hf:.4f}" if hf > 0 else ""])
        fh.flush()


if __name__ == "__main__":
    main()
