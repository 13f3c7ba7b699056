"""Single-behavior guessing curve against the decomposition bound (CSV).

For the gamma = 3/4 expression and input pair (0, 0) the single-behavior
curve is not concave, so its value underestimates the true guessing
probability.
"""
import argparse
import csv
import sys

import numpy as np

from randcert import CHSH_SCENARIO, InputDistribution, gamma_expression, local_bound
from randcert.programs import bell_maximum, guessing_from_violation, single_strategy_curve


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--gamma", type=float, default=0.75)
    ap.add_argument("--level", default="local-1")
    ap.add_argument("--points", type=int, default=12)
    args = ap.parse_args()

    expr = gamma_expression(args.gamma)
    p = InputDistribution.point(CHSH_SCENARIO, 0, 0)
    lo = local_bound(expr)
    hi = bell_maximum(expr, args.level) - 1e-6
    w = csv.writer(sys.stdout)
    w.writerow(["v", "single_behavior_G", "decomposition_G"])
    w.writerow(["dimensionless", "probability", "probability"])
    for v in np.linspace(lo, hi, args.points):
        f = single_strategy_curve(expr, v, 0, 0, args.level)
        G = guessing_from_violation(expr, v, p, args.level).G
        w.writerow([f"{v:.6f}", f"{f:.8f}", f"{G:.8f}"])


if __name__ == "__main__":
    main()
