"""FEM convergence on -2 sech^2 x: eigenvalue and H1 eigenvector errors versus N
and the eigenvector error versus the domain half-length L.

    python3 scripts/convergence.py [--out convergence]
"""

import argparse
from pathlib import Path

from lt_optim.report import write_csv
from lt_optim.studies import convergence_study


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="convergence")
    args = ap.parse_args()
    s = convergence_study()
    out = Path(args.out)
    cols = ["N", "L", "h", "lambda", "eig_error", "vec_error_h1"]
    write_csv(out / "convergence_N.csv", cols, [[r[c] for c in cols] for r in s.n_rows], "errors versus N at L = 20")
    write_csv(out / "convergence_L.csv", cols, [[r[c] for c in cols] for r in s.l_rows], "errors versus L at fixed h")
    print(f"eigenvalue slope {s.eig_slope_N:.4f}, H1 slope {s.vec_slope_N:.4f}, "
          f"L decay rate {s.decay_rate_L:.4f} (expected {s.expected_decay}), plateau {s.plateau:.2e}")


if __name__ == "__main__":
    main()
