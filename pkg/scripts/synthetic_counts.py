"""SYNTHETIC example of the counts pipeline.

Samples counts from a two-qubit model with finite efficiency, writes them
as CSV, projects them onto the no-signalling set and certifies the result.
The numbers are simulated and do not describe any experiment.
"""
import argparse
import tempfile
from pathlib import Path

import numpy as np

from randcert import InputDistribution, chsh_expression, evaluate_bell
from randcert.models import eberhard_behavior, optimize_eberhard
from randcert.pipeline import CountsRecord, check_quantum_membership, process_counts
from randcert.programs import guessing_weighted


def sample_counts(P, trials, rng) -> CountsRecord:
    """Per setting: trials N, coincidences C and singles SA, SB on outcome 0."""
    sx, sy = P.scenario.num_inputs_a, P.scenario.num_inputs_b
    N = np.full((sx, sy), trials, dtype=int)
    C = np.zeros((sx, sy), dtype=int)
    SA = np.zeros_like(C)
    SB = np.zeros_like(C)
    for x in range(sx):
        for y in range(sy):
            cell = rng.multinomial(trials, P.probabilities[:, :, x, y].ravel()).reshape(2, 2)
            C[x, y] = cell[0, 0]
            SA[x, y] = cell[0].sum()
            SB[x, y] = cell[:, 0].sum()
    return CountsRecord(N, C, SA, SB)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--eta", type=float, default=0.9)
    ap.add_argument("--trials", type=int, default=10**8)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    P_true = eberhard_behavior(optimize_eberhard(args.eta).config)
    rec = sample_counts(P_true, args.trials, rng)
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "synthetic_counts.csv"
        rec.to_csv(path)
        rec = CountsRecord.from_csv(path)
    P, prov = process_counts(rec)
    print("SYNTHETIC DATA")
    print(f"projection residual norm {prov['projection_residual_norm']:.3g}")
    print(f"CHSH model {evaluate_bell(chsh_expression(), P_true):.6f}  "
          f"sampled {evaluate_bell(chsh_expression(), P):.6f}")
    rep = check_quantum_membership(P)
    if not rep.feasible:
        print(f"projected point outside the relaxation (margin {rep.margin:.3g}); stopping")
        return
    r = guessing_weighted(P, InputDistribution.uniform(P.scenario))
    print(f"rate {r.min_entropy:.6g} bits/run ({r.status})")


if __name__ == "__main__":
    main()
