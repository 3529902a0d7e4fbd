"""Ratio R along the one-bound-state branch in d = 1, 2, 3.

In d = 1 the branch is compared with 2((gamma - 1/2)/(gamma + 1/2))^(gamma - 1/2).
Writes one CSV per dimension and the crossing of R = 1.

    python3 scripts/one_bound_state_branches.py [--out branches_k1] [--step 0.02]
"""

import argparse
from pathlib import Path

from lt_optim.continuation import continue_branch, find_crossing
from lt_optim.functional import conjectured_ratio_1d
from lt_optim.mesh_fem import LINE, RADIAL, make_grid
from lt_optim.optimizer import FixedPointConfig, gaussian_seed
from lt_optim.report import write_csv

# d: (gamma range, seed width, N, L)
SETUPS = {
    1: ((0.6, 1.7), 1.0, 4000, 40.0),
    2: ((0.4, 1.4), 2.0, 3000, 300.0),
    3: ((0.6, 1.2), 20.0, 3000, 300.0),
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="branches_k1")
    ap.add_argument("--step", type=float, default=0.02)
    args = ap.parse_args()
    out = Path(args.out)
    cfg = FixedPointConfig(tol=1e-9)
    for d, ((g0, g1), width, N, L) in SETUPS.items():
        grid = make_grid(N, L, LINE if d == 1 else RADIAL, 1.0 if d == 1 else 2.0)
        branch = continue_branch(gaussian_seed(grid, d, g0, width), (g0, g1), args.step, cfg)
        rows = []
        for p in branch.points:
            ref = conjectured_ratio_1d(p.gamma) if d == 1 else ""
            rows.append([p.gamma, p.ratio, p.energy, p.bound_states, ref])
        write_csv(out / f"d{d}.csv", ["gamma", "ratio", "energy", "bound_states", "closed_form"], rows,
                  f"one-bound-state branch, d={d}, N={N}, L={L}")
        cr = find_crossing(branch, 1.0, cfg)
        gc = "none" if cr is None else f"{cr.gamma_c:.4f}"
        print(f"d={d}: {len(branch.points)} points, label {branch.label}, crossing {gc}"
              + (f", terminated: {branch.terminated}" if branch.terminated else ""))


if __name__ == "__main__":
    main()
