"""Run configuration and on-disk formats: snapshots, CSV tables, JSON summaries, branch stores."""

from __future__ import annotations

import dataclasses
import json
import math
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .functional import LTParams, ParameterError
from .mesh_fem import LINE, RADIAL, Grid, PotentialField, make_grid, nodal_weights, interpolate_power

MODES = ("solve", "branch", "envelope", "convergence_study", "separation_study")
SNAPSHOT_MAGIC = "# lt_optim potential snapshot v1"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    mode: str = "solve"
    d: int = 1
    gamma: float | None = 1.2
    gamma_min: float | None = None
    gamma_max: float | None = None
    gamma_step: float = 0.01
    N: int = 2000
    L: float = 40.0
    grading: float = 2.0
    tol: float = 1e-10
    max_iters: int = 10_000
    seed_width: float = 1.0
    seed_amplitude: float = 1.0
    seed_shape: str = "gaussian"  # gaussian | algebraic | two_bump
    seed_decay: float = 2.0  # exponent of the algebraic seed (1 + (r/w)^2)^(-a)
    seed_separation: float = 4.0  # two-bump seed only
    seed_snapshot: str | None = None
    out: str = "lt_out"
    workers: int = 1
    threshold: float = 1.0
    crossing_width: float = 1e-4
    # convergence study
    study_N: list[int] = field(default_factory=lambda: [250, 500, 1000, 2000, 4000])
    study_L: list[float] = field(default_factory=lambda: [2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 12.0])
    study_L_ref: float = 20.0
    study_h: float = 5e-4

    @property
    def grid_kind(self) -> str:
        return LINE if self.d == 1 else RADIAL

    def gamma_range(self) -> tuple[float, float]:
        g0 = self.gamma if self.gamma is not None else self.gamma_min
        return float(g0), float(self.gamma_max)

    def validate(self) -> "RunConfig":
        """Check every parameter before any compute starts."""
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if int(self.d) != self.d or self.d < 1:
            raise ConfigError(f"d must be a positive integer, got {self.d}")
        if self.mode in ("convergence_study", "separation_study") and self.d != 1:
            raise ConfigError(f"{self.mode} is defined for d = 1")
        gammas = [g for g in (self.gamma, self.gamma_min, self.gamma_max) if g is not None]
        if self.mode != "convergence_study" and not gammas:
            raise ConfigError("a gamma value is required")
        for g in gammas:
            try:
                LTParams(float(g), int(self.d))
            except ParameterError as exc:
                raise ConfigError(str(exc)) from exc
        if self.mode in ("branch", "envelope"):
            if self.gamma_max is None or (self.gamma is None and self.gamma_min is None):
                raise ConfigError("branch modes need gamma (or gamma_min) and gamma_max")
            if not 0 < self.gamma_step <= 0.05:
                raise ConfigError("gamma_step must lie in (0, 0.05]")
        if int(self.N) != self.N or self.N < 8:
            raise ConfigError(f"N must be an integer >= 8, got {self.N}")
        if not self.L > 0:
            raise ConfigError(f"L must be positive, got {self.L}")
        if not self.grading >= 1:
            raise ConfigError(f"grading must be >= 1, got {self.grading}")
        if not self.tol > 0 or self.max_iters < 1:
            raise ConfigError("tol must be positive and max_iters >= 1")
        if not self.seed_width > 0 or not self.seed_amplitude > 0:
            raise ConfigError("seed width and amplitude must be positive")
        if self.seed_shape not in ("gaussian", "algebraic", "two_bump"):
            raise ConfigError(f"unknown seed shape {self.seed_shape!r}")
        if self.seed_shape == "two_bump" and self.d != 1:
            raise ConfigError("the two-bump seed is defined for d = 1")
        if self.seed_snapshot is not None and not Path(self.seed_snapshot).is_file():
            raise ConfigError(f"seed snapshot {self.seed_snapshot!r} does not exist")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.mode == "convergence_study":
            if min(self.study_N) < 8 or min(self.study_L) <= 0 or self.study_h <= 0:
                raise ConfigError("study sizes must be positive (N >= 8)")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def effective_workers(requested: int) -> int:
    """Worker count capped by ``LT_OPTIM_WORKERS`` when that is set."""
    cap = os.environ.get("LT_OPTIM_WORKERS")
    if cap:
        try:
            return max(1, min(int(requested), int(cap)))
        except ValueError as exc:
            raise ConfigError(f"LT_OPTIM_WORKERS must be an integer, got {cap!r}") from exc
    return max(1, int(requested))


# ---------------------------------------------------------------------------
# snapshots


def potential_norm(V: PotentialField) -> float:
    w = nodal_weights(V.grid, V.d)
    return float(w @ interpolate_power(np.clip(-V.values, 0.0, None), V.p))


def write_snapshot(V: PotentialField, path, extra: dict | None = None) -> Path:
    """Text snapshot: ``#`` header lines, then one ``r,V`` pair per node.

    Floats are written with ``repr`` so a reload is bit-identical.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "kind": V.grid.kind, "d": V.d, "gamma": V.gamma, "N": V.grid.N, "L": V.grid.L,
        "grading": V.grid.grading, "norm": potential_norm(V),
    }
    if extra:
        header.update(extra)
    lines = [SNAPSHOT_MAGIC, "# " + json.dumps(header), "# columns: r,V"]
    lines += [f"{r!r},{v!r}" for r, v in zip(V.grid.nodes.tolist(), V.values.tolist())]
    tmp = path.with_name(path.name + f".tmp{os.getpid()}_{threading.get_ident()}")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, path)
    return path


def read_snapshot(path) -> PotentialField:
    text = Path(path).read_text().splitlines()
    if not text or text[0] != SNAPSHOT_MAGIC:
        raise ConfigError(f"{path} is not a potential snapshot")
    header = json.loads(text[1][2:])
    rows = [ln.split(",") for ln in text if ln and not ln.startswith("#")]
    nodes = np.array([float(a) for a, _ in rows])
    values = np.array([float(b) for _, b in rows])
    grid = Grid(nodes, header["kind"], float(header["L"]), float(header["grading"]))
    return PotentialField(grid, values, int(header["d"]), float(header["gamma"]))


def resample(V: PotentialField, grid: Grid) -> PotentialField:
    """Linear interpolation of a snapshot onto another grid (zero outside)."""
    vals = np.interp(grid.nodes, V.grid.nodes, V.values, left=0.0, right=0.0)
    return PotentialField(grid, vals, V.d, V.gamma)


# ---------------------------------------------------------------------------
# tables


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (list, tuple)):
        return " ".join(_fmt(v) for v in x)
    return "" if x is None else str(x)


def write_csv(path, columns: list[str], rows, doc: str) -> Path:
    """CSV with a leading ``#`` comment line that documents the columns."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    out = [f"# {doc}", ",".join(columns)]
    out += [",".join(_fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(out) + "\n")
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    return lines[0].split(","), [ln.split(",") for ln in lines[1:]]


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_summary(path, config: RunConfig, results: dict) -> Path:
    """JSON summary; the full config is embedded so the run can be replayed."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"config": config.to_dict(), "results": _jsonable(results)}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def read_summary(path) -> tuple[RunConfig, dict]:
    doc = json.loads(Path(path).read_text())
    return RunConfig.from_dict(doc["config"]), doc["results"]


# ---------------------------------------------------------------------------
# branch store


class BranchStore:
    """One directory per branch: ``manifest.json`` plus a snapshot per point.

    Snapshots are written atomically under names keyed by gamma, so several
    branches (or threads) can write into sibling directories at once.
    """

    def __init__(self, root):
        self.root = Path(root)
        self._lock = threading.Lock()

    def branch_dir(self, name: str) -> Path:
        return self.root / name

    def save(self, name: str, branch, crossing=None) -> Path:
        bdir = self.branch_dir(name)
        bdir.mkdir(parents=True, exist_ok=True)
        points = []
        for pt in branch.points:
            fname = pt.snapshot_ref + ".txt"
            write_snapshot(pt.potential, bdir / fname, {"ratio": pt.ratio, "bound_states": pt.bound_states})
            points.append({"gamma": pt.gamma, "ratio": pt.ratio, "energy": pt.energy,
                           "bound_states": pt.bound_states, "iterations": pt.iterations,
                           "potential_snapshot_ref": fname})
        manifest = {
            "label": branch.label, "d": branch.d, "direction": branch.direction,
            "gammas": [p["gamma"] for p in points], "ratios": [p["ratio"] for p in points],
            "bound_states": [p["bound_states"] for p in points], "points": points,
            "events": branch.events, "terminated": branch.terminated,
            "crossing": None if crossing is None else dataclasses.asdict(crossing),
        }
        with self._lock:
            (bdir / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2) + "\n")
        return bdir

    def load_manifest(self, name: str) -> dict:
        return json.loads((self.branch_dir(name) / "manifest.json").read_text())

    def load_point(self, name: str, ref: str) -> PotentialField:
        return read_snapshot(self.branch_dir(name) / ref)


def grid_from_config(cfg: RunConfig) -> Grid:
    return make_grid(cfg.N, cfg.L, cfg.grid_kind, cfg.grading)
