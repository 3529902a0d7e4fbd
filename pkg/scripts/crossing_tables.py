"""Threshold crossings gamma_c of one- and multi-bound-state branches in d = 1, 2, 3.

Each case names a seed (shape, width), the gamma where it is converged, and
the grid. The branch is continued in steps of 0.01 towards R = 1 and the
crossing is bisected. Results go to a CSV and are printed as a table.

    python3 scripts/crossing_tables.py [--only d2_k4,d3_k14] [--out crossings.csv]
"""

import argparse
import time

import numpy as np

from lt_optim.continuation import locate_crossing
from lt_optim.optimizer import FixedPointConfig
from lt_optim.report import write_csv
from lt_optim.studies import CROSSING_CASES, crossing_seed

COLUMNS = ["case", "d", "k_expected", "k_found", "gamma_c", "reference", "seconds"]


def run_case(name, width=1e-3, tol=1e-9):
    case = CROSSING_CASES[name]
    t = time.time()
    branch, cr = locate_crossing(crossing_seed(case), case.gamma0, FixedPointConfig(tol=tol, max_iters=5000),
                                 width=width)
    counts = sorted({p.bound_states for p in branch.points})
    return {"case": name, "d": case.d, "k_expected": case.k, "k_found": counts,
            "gamma_c": None if cr is None else cr.gamma_c, "reference": case.reference,
            "seconds": time.time() - t, "points": len(branch.points)}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--only", default="")
    ap.add_argument("--width", type=float, default=1e-3)
    ap.add_argument("--out", default="crossings.csv")
    args = ap.parse_args()
    names = [n for n in CROSSING_CASES if not args.only or n in args.only.split(",")]
    rows = []
    for n in names:
        r = run_case(n, args.width)
        rows.append(r)
        gc = np.nan if r["gamma_c"] is None else r["gamma_c"]
        print(f"{n:8s} k={r['k_found']} gamma_c={gc:.4f} reference={r['reference']:.3f} "
              f"diff={gc - r['reference']:+.4f} ({r['seconds']:.0f} s, {r['points']} points)", flush=True)
    write_csv(args.out, COLUMNS, [[r[c] for c in COLUMNS] for r in rows],
              "threshold crossings: case, d, expected count, counts seen, gamma_c, reference, seconds")


if __name__ == "__main__":
    main()
