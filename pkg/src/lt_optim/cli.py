"""Command-line driver: ``lt-optim --mode solve|branch|envelope|convergence_study|separation_study``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .continuation import (
    BranchTerminated,
    RefinementError,
    continue_branch,
    find_crossing,
    seed_library,
    upper_envelope,
)
from .mesh_fem import MeshError, PotentialField
from .optimizer import (
    DegenerateDensityError,
    FixedPointConfig,
    LostSpectrumError,
    MonotonicityError,
    gaussian_seed,
    normalize,
    two_bump_seed,
)
from .optimizer import fixed_point_run
from .report import (
    BranchStore,
    ConfigError,
    RunConfig,
    effective_workers,
    grid_from_config,
    read_snapshot,
    resample,
    write_csv,
    write_snapshot,
    write_summary,
)
from .spectral import SpectralError
from .studies import convergence_study, separation_study

log = logging.getLogger("lt_optim")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_SEPARATION = 4

NUMERICAL_ERRORS = (SpectralError, LostSpectrumError, MonotonicityError, DegenerateDensityError,
                    BranchTerminated, RefinementError, FloatingPointError)

TRACE_DOC = "iteration trace: iter, LT energy E(V_n), ratio R(V_n), sup|V_n - V_(n-1)|, bound states"
BRANCH_DOC = "branch R(gamma): gamma, ratio R, LT energy, bound states, fixed-point iterations, snapshot file"


def build_seed(cfg: RunConfig, gamma: float) -> PotentialField:
    grid = grid_from_config(cfg)
    if cfg.seed_snapshot:
        V = read_snapshot(cfg.seed_snapshot)
        if V.d != cfg.d:
            raise ConfigError(f"snapshot has d={V.d}, config has d={cfg.d}")
        if V.grid.N != grid.N or V.grid.kind != grid.kind or not np.array_equal(V.grid.nodes, grid.nodes):
            V = resample(V, grid)
        return normalize(V.with_gamma(gamma))
    if cfg.seed_shape == "two_bump":
        return two_bump_seed(grid, gamma, cfg.seed_separation, cfg.seed_width)
    if cfg.seed_shape == "algebraic":
        x = grid.nodes
        vals = -cfg.seed_amplitude * (1 + (x / cfg.seed_width) ** 2) ** (-cfg.seed_decay)
        return normalize(PotentialField(grid, vals, cfg.d, gamma))
    return gaussian_seed(grid, cfg.d, gamma, cfg.seed_width, cfg.seed_amplitude)


def fp_config(cfg: RunConfig, gamma: float | None = None) -> FixedPointConfig:
    return FixedPointConfig(gamma=gamma, tol=cfg.tol, max_iters=cfg.max_iters,
                            workers=effective_workers(cfg.workers))


def cmd_solve(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    gamma = float(cfg.gamma)
    V0 = build_seed(cfg, gamma)
    res = fixed_point_run(V0, fp_config(cfg, gamma))
    tr = res.trace
    write_csv(out / "trace.csv", ["iter", "energy", "ratio", "residual_sup", "bound_states"],
              [(s.iter, s.energy, s.ratio, s.residual_sup, s.bound_states) for s in tr.steps], TRACE_DOC)
    write_snapshot(res.potential, out / "potential.txt")
    ev = res.evaluation
    write_summary(out / "summary.json", cfg, {
        "outcome": tr.outcome, "iterations": len(tr.steps) - 1, "energy": ev.energy, "ratio": ev.ratio,
        "norm_integral": ev.norm_integral, "bound_states": ev.bound_states,
        "channels": [len(c) for c in res.spectrum.channels],
        "eigenvalues": {str(c.l): c.eigenvalues for c in res.spectrum.channels},
        "monotone_violations": tr.monotone_violations,
    })
    print(f"{tr.outcome}: R = {ev.ratio:.8f}, E = {ev.energy:.8g}, bound states = {ev.bound_states}, "
          f"iterations = {len(tr.steps) - 1}")
    if tr.outcome == "bump_separation":
        return EXIT_SEPARATION
    return EXIT_OK if res.converged else EXIT_NUMERICAL


def _run_branch(cfg: RunConfig, seed: PotentialField, name: str, store: BranchStore) -> dict:
    g0, g1 = cfg.gamma_range()
    fcfg = fp_config(cfg)
    branch = continue_branch(seed, (g0, g1), cfg.gamma_step, fcfg)
    crossing = find_crossing(branch, cfg.threshold, fcfg, cfg.crossing_width) if len(branch.points) > 1 else None
    bdir = store.save(name, branch, crossing)
    write_csv(bdir / "ratio.csv", ["gamma", "ratio", "energy", "bound_states", "iterations", "snapshot"],
              [(p.gamma, p.ratio, p.energy, p.bound_states, p.iterations, p.snapshot_ref + ".txt")
               for p in branch.points], BRANCH_DOC)
    info = {"name": name, "label": branch.label, "points": len(branch.points), "terminated": branch.terminated,
            "events": branch.events, "gamma_c": None if crossing is None else crossing.gamma_c,
            "crossing": None if crossing is None else {"left": crossing.left, "right": crossing.right,
                                                       "width": crossing.width}}
    (bdir / "crossing.json").write_text(json.dumps(info, indent=2, default=float) + "\n")
    return {"branch": branch, "crossing": crossing, "info": info}


def cmd_branch(cfg: RunConfig) -> int:
    g0, _ = cfg.gamma_range()
    store = BranchStore(Path(cfg.out) / "branches")
    r = _run_branch(cfg, build_seed(cfg, g0), "branch", store)
    write_summary(Path(cfg.out) / "summary.json", cfg, r["info"])
    gc = r["info"]["gamma_c"]
    print(f"{r['info']['label']}: {r['info']['points']} points, crossing "
          + ("none" if gc is None else f"gamma_c = {gc:.5f}"))
    return EXIT_OK


def cmd_envelope(cfg: RunConfig) -> int:
    """Seed library at the first gamma, one branch per bound-state count, pointwise envelope."""
    g0, g1 = cfg.gamma_range()
    grid = grid_from_config(cfg)
    seeds = seed_library(grid, cfg.d, g0, cfg=fp_config(cfg, g0))
    if not seeds:
        raise BranchTerminated("no seed converged", g0)
    store = BranchStore(Path(cfg.out) / "branches")
    workers = effective_workers(cfg.workers)
    branch_cfg = RunConfig(**{**cfg.to_dict(), "workers": 1})
    jobs = [(f"k{k:04d}", res.potential) for k, res in seeds.items()]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda j: _run_branch(branch_cfg, j[1], j[0], store), jobs))
    gammas = np.round(np.arange(min(g0, g1), max(g0, g1) + 1e-9, cfg.gamma_step), 12)
    env = upper_envelope([r["branch"] for r in results], gammas)
    write_csv(Path(cfg.out) / "envelope.csv", ["gamma", "best_ratio", "best_label"],
              [(e["gamma"], e["best_ratio"], e["best_label"]) for e in env],
              "upper envelope of the computed branches (a lower bound on the optimal ratio): "
              "gamma, best ratio, branch label or 'semiclassical'")
    write_summary(Path(cfg.out) / "summary.json", cfg, {
        "branches": [r["info"] for r in results], "envelope": env,
        "note": "values are lower bounds: branches that were not found are not accounted for",
    })
    for r in results:
        print(f"{r['info']['label']}: gamma_c = {r['info']['gamma_c']}")
    return EXIT_OK


def cmd_convergence_study(cfg: RunConfig) -> int:
    s = convergence_study(cfg.study_N, cfg.study_L_ref, cfg.study_L, cfg.study_h)
    out = Path(cfg.out)
    cols = ["N", "L", "h", "lambda", "eig_error", "vec_error_h1"]
    write_csv(out / "convergence_N.csv", cols, [[r[c] for c in cols] for r in s.n_rows],
              "Poschl-Teller -2 sech^2 errors vs N at fixed L: N, L, h, lambda_h, |lambda_h + 1|, H1 error")
    write_csv(out / "convergence_L.csv", cols, [[r[c] for c in cols] for r in s.l_rows],
              "Poschl-Teller -2 sech^2 errors vs L at fixed h: N, L, h, lambda_h, |lambda_h + 1|, H1 error")
    write_summary(out / "summary.json", cfg, {
        "eig_slope_N": s.eig_slope_N, "vec_slope_N": s.vec_slope_N, "decay_rate_L": s.decay_rate_L,
        "expected_decay_rate": s.expected_decay, "plateau": s.plateau, "fit_L": s.fit_L,
    })
    print(f"slopes: eigenvalue {s.eig_slope_N:.4f}, H1 eigenvector {s.vec_slope_N:.4f}; "
          f"L decay rate {s.decay_rate_L:.4f} (sqrt(-lambda) = 1); plateau {s.plateau:.3e}")
    return EXIT_OK


def cmd_separation_study(cfg: RunConfig) -> int:
    seed = build_seed(cfg, float(cfg.gamma))
    s = separation_study(gamma=float(cfg.gamma), iters=cfg.max_iters, seed=seed)
    out = Path(cfg.out)
    write_csv(out / "distances.csv", ["iter", "distance"], zip(s.iterations.tolist(), s.distances.tolist()),
              "bump separation: iteration n, distance between outermost bump centers")
    write_summary(out / "summary.json", cfg, {
        "outcome": s.outcome, "separated": s.separated, "lambda_single": s.lam_single, "lambda_bump": s.lam_bump,
        "expected_rate": s.expected_rate, "rate": s.rate, "intercept": s.intercept,
        "r_squared": s.r_squared, "relative_error": s.relative_error, "spacing": s.spacing, "drift": s.drift,
    })
    if not s.separated:
        print("no separation")
    else:
        print(f"fitted rate {s.rate}, expected 1/(2 sqrt(-lambda)) = {s.expected_rate}")
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "branch": cmd_branch,
    "envelope": cmd_envelope,
    "convergence_study": cmd_convergence_study,
    "separation_study": cmd_separation_study,
}

FLAGS = {
    "--mode": ("mode", str, "solve, branch, envelope, convergence_study or separation_study"),
    "--d": ("d", int, "dimension"),
    "--gamma": ("gamma", float, "moment exponent (branch start)"),
    "--gamma-min": ("gamma_min", float, "lower end of a branch range"),
    "--gamma-max": ("gamma_max", float, "upper end of a branch range"),
    "--gamma-step": ("gamma_step", float, "continuation step"),
    "--N": ("N", int, "number of elements"),
    "--L": ("L", float, "domain half-length (line) or radius"),
    "--grading": ("grading", float, "radial grading exponent, 1 for uniform"),
    "--tol": ("tol", float, "sup-norm tolerance of the fixed-point residual"),
    "--max-iters": ("max_iters", int, "iteration cap"),
    "--seed-width": ("seed_width", float, "seed length scale"),
    "--seed-amplitude": ("seed_amplitude", float, "seed depth before normalization"),
    "--seed-shape": ("seed_shape", str, "gaussian, algebraic or two_bump"),
    "--seed-snapshot": ("seed_snapshot", str, "potential snapshot used as the seed"),
    "--out": ("out", str, "output directory"),
    "--workers": ("workers", int, "threads for channel solves and envelopes"),
}


def parse_config(argv=None) -> tuple[RunConfig, argparse.Namespace]:
    ap = argparse.ArgumentParser(prog="lt-optim", description=__doc__)
    ap.add_argument("--config", help="JSON file with RunConfig fields, or a summary.json to replay; flags override it")
    ap.add_argument("-v", "--verbose", action="store_true")
    for flag, (dest, typ, text) in FLAGS.items():
        ap.add_argument(flag, dest=dest, type=typ, default=None, help=text)
    ns = ap.parse_args(argv)
    data = {}
    if ns.config:
        try:
            data = json.loads(Path(ns.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {ns.config}: {exc}") from exc
        if isinstance(data, dict) and isinstance(data.get("config"), dict) and "results" in data:
            data = data["config"]  # a summary.json replays its recorded config
        if not isinstance(data, dict):
            raise ConfigError(f"config {ns.config} must hold a JSON object")
        data.pop("_comment", None)
    for dest, _, _ in FLAGS.values():
        val = getattr(ns, dest)
        if val is not None:
            data[dest] = val
    try:
        cfg = RunConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate(), ns


def main(argv=None) -> int:
    try:
        cfg, ns = parse_config(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # argparse usage errors
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[cfg.mode](cfg)
    except (ConfigError, MeshError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
