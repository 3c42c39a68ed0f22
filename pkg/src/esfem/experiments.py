"""Config-driven runs of the four numerical experiments.

A config is one JSON object::

    {"example": 1, "mode": "ale", "levels": [2, 3, 4, 5, 6],
     "tau_coupling": {"kind": "h", "constant": 0.1},
     "solver": {"kind": "auto", "tol": 1e-10, "max_iter": 1000},
     "quadrature_degree": 6, "output_dir": "out", "snapshots": []}

Optional keys: ``scheme`` (``bdf1``/``bdf2``), ``T``, ``rk_substeps``,
``variants`` (Example 4), ``spacing`` (Example 2 grid spacing),
``start_substeps`` and ``jobs``. A ``tau_coupling`` of kind ``"fixed"`` uses
``constant`` as the time step itself. Missing keys take the per-example
defaults in :data:`DEFAULTS`.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import jsonschema
import numpy as np

from . import manufactured as mf
from .errors import ErrorReport, accumulate_norms
from .exceptions import ConfigError
from .fem import Assembler
from .mesh import (
    QualityReport,
    SurfaceMesh,
    marching_cubes_mesh,
    prolongation,
    quality_metrics,
    refine,
    refine_project,
    write_vtk,
)
from .timestepping import SolverConfig, Stepper, TimeGrid

logger = logging.getLogger(__name__)

EXAMPLE2_BOUNDS = ((-0.3, -1.15, -1.15), (0.3, 1.15, 1.15))

DEFAULTS = {
    1: {"mode": "ale", "levels": [2, 3, 4, 5, 6], "scheme": "bdf2", "T": 2.0,
        "tau_coupling": {"kind": "h", "constant": 0.1}, "rk_substeps": 4},
    2: {"mode": "both", "levels": [0], "scheme": "bdf2", "T": 1.0, "spacing": 0.05,
        "tau_coupling": {"kind": "fixed", "constant": 1e-3}, "rk_substeps": 1,
        "snapshots": [0.2, 0.4, 0.7, 1.0]},
    3: {"mode": "both", "levels": [4], "scheme": "bdf1", "T": 0.25,
        "tau_coupling": {"kind": "fixed", "constant": 1e-5}, "rk_substeps": 1,
        "snapshots": [0.25]},
    4: {"mode": "lagrangian", "levels": [6], "scheme": "bdf1", "T": 6.0, "variants": [1, 2, 3, 4],
        "tau_coupling": {"kind": "fixed", "constant": 1e-4}, "rk_substeps": 1},
}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["example"],
    "additionalProperties": False,
    "properties": {
        "example": {"type": "integer", "enum": [1, 2, 3, 4]},
        "mode": {"enum": ["lagrangian", "ale", "both"]},
        "levels": {
            "oneOf": [
                {"type": "integer", "minimum": 0},
                {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
            ]
        },
        "tau_coupling": {
            "type": "object",
            "required": ["kind", "constant"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["h", "h2", "fixed"]},
                "constant": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["auto", "direct", "gmres", "bicgstab"]},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
                "restart": {"type": "integer", "minimum": 1},
            },
        },
        "quadrature_degree": {"type": "integer", "minimum": 1, "maximum": 20},
        "output_dir": {"type": "string"},
        "snapshots": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "scheme": {"enum": ["bdf1", "bdf2"]},
        "T": {"type": "number", "exclusiveMinimum": 0},
        "rk_substeps": {"type": "integer", "minimum": 1},
        "variants": {"type": "array", "items": {"enum": [1, 2, 3, 4]}, "minItems": 1},
        "spacing": {"type": "number", "exclusiveMinimum": 0},
        "start_substeps": {"type": "integer", "minimum": 1},
        "jobs": {"type": "integer", "minimum": 1},
    },
}


@dataclass
class RunConfig:
    example: int
    mode: str
    levels: list[int]
    tau_kind: str
    tau_constant: float
    solver: SolverConfig
    quadrature_degree: int = 6
    output_dir: str = "esfem-output"
    snapshots: list[float] = field(default_factory=list)
    scheme: str = "bdf2"
    T: float = 1.0
    rk_substeps: int = 1
    variants: list[int] = field(default_factory=lambda: [1, 2, 3, 4])
    spacing: float = 0.05
    start_substeps: int = 16
    jobs: int = 1

    @property
    def modes(self) -> list[str]:
        return ["lagrangian", "ale"] if self.mode == "both" else [self.mode]

    def tau_for(self, h: float) -> float:
        if self.tau_kind == "h":
            return self.tau_constant * h
        if self.tau_kind == "h2":
            return self.tau_constant * h * h
        return self.tau_constant


def parse_config(doc: dict) -> RunConfig:
    """Validate a config document and fill in per-example defaults."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {exc.message}") from None
    merged = copy.deepcopy(DEFAULTS[doc["example"]])
    merged.update(copy.deepcopy(doc))
    if merged["example"] == 4 and merged["mode"] != "lagrangian":
        raise ConfigError("example 4 runs with Lagrangian motion only")
    levels = merged["levels"]
    levels = [levels] if isinstance(levels, int) else list(levels)
    if levels != sorted(set(levels)):
        raise ConfigError("levels must be strictly increasing")
    solver = merged.get("solver", {})
    tc = merged["tau_coupling"]
    return RunConfig(
        example=merged["example"],
        mode=merged["mode"],
        levels=levels,
        tau_kind=tc["kind"],
        tau_constant=float(tc["constant"]),
        solver=SolverConfig(solver.get("kind", "auto"), float(solver.get("tol", 1e-10)),
                            int(solver.get("max_iter", 1000)), int(solver.get("restart", 50))),
        quadrature_degree=merged.get("quadrature_degree", 6),
        output_dir=merged.get("output_dir", "esfem-output"),
        snapshots=[float(s) for s in merged.get("snapshots", [])],
        scheme=merged["scheme"],
        T=float(merged["T"]),
        rk_substeps=merged["rk_substeps"],
        variants=list(merged.get("variants", [1, 2, 3, 4])),
        spacing=float(merged.get("spacing", 0.05)),
        start_substeps=merged.get("start_substeps", 16),
        jobs=merged.get("jobs", 1),
    )


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(doc)


# ---------------------------------------------------------------------------
# Meshes
# ---------------------------------------------------------------------------


def initial_mesh(problem: mf.ManufacturedProblem, level: int = 0, spacing: float = 0.05) -> SurfaceMesh:
    """Initial triangulation for ``problem`` at refinement ``level``."""
    t0 = problem.time_interval[0]
    if problem.macro == "marching-cubes":
        return marching_cubes_mesh(problem.surface, spacing, EXAMPLE2_BOUNDS, t0)
    return refine_project(problem.surface, problem.macro, level, t0)


def _mode_dir(cfg: RunConfig, mode: str) -> str:
    d = os.path.join(cfg.output_dir, mode) if cfg.mode == "both" else cfg.output_dir
    os.makedirs(d, exist_ok=True)
    return d


def _snapshot_steps(times, grid: TimeGrid) -> dict[int, float]:
    return {int(round((t - grid.t0) / grid.tau)): t for t in times if grid.t0 <= t <= grid.T + 1e-12}


# ---------------------------------------------------------------------------
# CSV writers
# ---------------------------------------------------------------------------


def write_mass_csv(path, times, mass, labels=None) -> None:
    """``step, time, mass`` rows; a 2-D ``mass`` gets one column per label."""
    mass = np.asarray(mass)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if mass.ndim == 1:
            w.writerow(("step", "time", "mass"))
            for n, (t, m) in enumerate(zip(times, mass)):
                w.writerow((n, repr(float(t)), repr(float(m))))
        else:
            labels = labels or [str(j) for j in range(mass.shape[1])]
            w.writerow(("step", "time") + tuple(f"mass_{lab}" for lab in labels))
            for n, (t, m) in enumerate(zip(times, mass)):
                w.writerow((n, repr(float(t))) + tuple(repr(float(v)) for v in m))


def read_mass_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    return data[:, 1], (data[:, 2] if data.shape[1] == 3 else data[:, 2:])


QUALITY_COLUMNS = ("time", "h", "min_angle", "max_aspect", "min_area", "max_area")


def write_quality_csv(path, reports: list[QualityReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(QUALITY_COLUMNS)
        for q in reports:
            w.writerow(tuple(repr(float(v)) for v in asdict(q).values()))


def read_quality_csv(path) -> list[QualityReport]:
    with open(path, newline="") as fh:
        return [QualityReport(**{k: float(v) for k, v in rec.items()}) for rec in csv.DictReader(fh)]


def write_table_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow(tuple(v if isinstance(v, (int, str)) else repr(float(v)) for v in r))


# ---------------------------------------------------------------------------
# Example 1: convergence tables
# ---------------------------------------------------------------------------


@dataclass
class LevelResult:
    level: int
    h: float
    linf_l2: float
    l2_h1: float
    steps: int
    times: list[float]
    mass: list[float]


def convergence_level(level: int, mode: str, cfg: RunConfig) -> LevelResult:
    """One refinement level of Example 1: errors against the exact solution."""
    problem = mf.example1()
    mesh0 = initial_mesh(problem, level)
    grid = TimeGrid.from_step(cfg.T, cfg.tau_for(mesh0.h()))
    stepper = Stepper(problem, mesh0, grid, cfg.scheme, mode, cfg.solver, cfg.rk_substeps,
                      cfg.quadrature_degree, track_errors=True, start_substeps=cfg.start_substeps)
    res = stepper.run()
    first = 2 if cfg.scheme == "bdf2" else 1
    linf_l2, l2_h1 = accumulate_norms(list(zip(res.l2, res.h1))[first:], grid.tau)
    logger.info("example1 %s level %d: h=%.5f N=%d Linf(L2)=%.5e L2(H1)=%.5e",
                mode, level, res.h_final, grid.N, linf_l2, l2_h1)
    return LevelResult(level, res.h_final, linf_l2, l2_h1, grid.N, res.times, res.mass)


def _map(fn, args, jobs):
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, *zip(*args)))
    return [fn(*a) for a in args]


def run_example1(cfg: RunConfig) -> dict[str, ErrorReport]:
    reports = {}
    for mode in cfg.modes:
        out = _mode_dir(cfg, mode)
        results = _map(convergence_level, [(lv, mode, cfg) for lv in cfg.levels], cfg.jobs)
        report = ErrorReport()
        for r in results:
            report.add(r.h, r.linf_l2, r.l2_h1)
            write_mass_csv(os.path.join(out, f"mass_level{r.level}.csv"), r.times, r.mass)
        report.to_csv(os.path.join(out, "errors.csv"))
        reports[mode] = report
    return reports


# ---------------------------------------------------------------------------
# Example 2: mesh quality
# ---------------------------------------------------------------------------


def run_example2(cfg: RunConfig, solve: bool = True) -> dict[str, list[QualityReport]]:
    """Both motions from one initial mesh; quality series and error snapshots.

    With ``solve=False`` only the mesh is moved (quality series only).
    """
    problem = mf.example2()
    mesh0 = initial_mesh(problem, spacing=cfg.spacing)
    grid = TimeGrid.from_step(cfg.T, cfg.tau_for(mesh0.h()))
    snaps = _snapshot_steps(cfg.snapshots, grid)
    out_all = {}
    for mode in cfg.modes:
        out = _mode_dir(cfg, mode)
        quality: list[QualityReport] = []

        def observe(state, mode=mode, out=out, quality=quality):
            quality.append(quality_metrics(state.mesh))
            if state.n in snaps:
                exact = problem.exact.value(state.mesh.vertices, state.t)
                write_vtk(os.path.join(out, f"example2_{mode}_{state.n}.vtk"), state.mesh,
                          {"U": state.U, "error": state.U - exact}, title=f"example2 {mode}")

        if solve:
            stepper = Stepper(problem, mesh0, grid, cfg.scheme, mode, cfg.solver, cfg.rk_substeps,
                              cfg.quadrature_degree, start_substeps=cfg.start_substeps)
            res = stepper.run(callback=observe)
            write_mass_csv(os.path.join(out, "mass.csv"), res.times, res.mass)
        else:
            motion = problem.motion(mode, cfg.rk_substeps)
            mesh = mesh0
            quality.append(quality_metrics(mesh))
            for n in range(grid.N):
                mesh = motion.advance(mesh, mesh0, grid.time(n + 1))
                quality.append(quality_metrics(mesh))
        write_quality_csv(os.path.join(out, "quality.csv"), quality)
        out_all[mode] = quality
    return out_all


# ---------------------------------------------------------------------------
# Example 3: graph with natural boundary conditions
# ---------------------------------------------------------------------------


@dataclass
class GraphRun:
    level: int
    mesh: SurfaceMesh
    U: np.ndarray
    quality: list[QualityReport]


def run_example3(cfg: RunConfig) -> dict[str, list[GraphRun]]:
    """Both motions at each level; quality series, snapshots and self-convergence table."""
    problem = mf.example3()
    runs: dict[str, list[GraphRun]] = {}
    for mode in cfg.modes:
        out = _mode_dir(cfg, mode)
        runs[mode] = []
        for level in cfg.levels:
            mesh0 = initial_mesh(problem, level)
            grid = TimeGrid.from_step(cfg.T, cfg.tau_for(mesh0.h()))
            snaps = _snapshot_steps(cfg.snapshots, grid)
            quality: list[QualityReport] = []

            def observe(state, level=level, mode=mode, out=out, quality=quality):
                quality.append(quality_metrics(state.mesh))
                if state.n in snaps:
                    write_vtk(os.path.join(out, f"example3_{mode}_L{level}_{state.n}.vtk"),
                              state.mesh, {"U": state.U}, title=f"example3 {mode}")

            stepper = Stepper(problem, mesh0, grid, cfg.scheme, mode, cfg.solver, cfg.rk_substeps,
                              cfg.quadrature_degree, start_substeps=cfg.start_substeps)
            res = stepper.run(callback=observe)
            tag = "" if len(cfg.levels) == 1 else f"_level{level}"
            write_quality_csv(os.path.join(out, f"quality{tag}.csv"), quality)
            write_mass_csv(os.path.join(out, f"mass{tag}.csv"), res.times, res.mass)
            runs[mode].append(GraphRun(level, res.final_state.mesh, res.final_state.U, quality))
        if len(runs[mode]) > 1:
            rows = self_convergence(runs[mode])
            write_table_csv(os.path.join(out, "selfconv.csv"), ("level", "l2_diff_to_finest"), rows)
    return runs


def self_convergence(runs: list[GraphRun]) -> list[tuple[int, float]]:
    """L2 distance on the finest mesh between each coarser solution and the finest one.

    Coarse solutions are carried to the finest mesh by nodal prolongation;
    the levels must be consecutive.
    """
    finest = runs[-1]
    M = Assembler.for_mesh(finest.mesh).mass(finest.mesh)
    rows = []
    for run in runs[:-1]:
        if finest.level - run.level < 1:
            continue
        U, mesh = run.U, run.mesh
        for _ in range(finest.level - run.level):
            P = prolongation(mesh)
            U = P @ U
            mesh = refine(mesh)[0]
        if len(U) != finest.mesh.n_vertices:
            raise ValueError("levels are not nested")
        d = U - finest.U
        rows.append((run.level, float(np.sqrt(d @ (M @ d)))))
    return rows


# ---------------------------------------------------------------------------
# Example 4: periodic ellipsoid
# ---------------------------------------------------------------------------


@dataclass
class PeriodicResult:
    times: np.ndarray
    norm_const: np.ndarray  # ||U_1||_{L2}
    diffs: dict[int, np.ndarray]  # variant -> ||U_v - U_1||_{L2}
    mass: np.ndarray  # (steps, variants)
    variants: list[int]


def run_example4(cfg: RunConfig) -> PeriodicResult:
    """All variants together: one mesh, one matrix per step, several right-hand sides."""
    variants = sorted(set(cfg.variants) | {1})
    problem = mf.example4(1)
    mesh0 = initial_mesh(problem, cfg.levels[-1])
    M0 = Assembler.for_mesh(mesh0).mass(mesh0)
    U0 = np.column_stack([mf.mass_matched_initial(mesh0, M0, v) for v in variants])
    grid = TimeGrid.from_step(cfg.T, cfg.tau_for(mesh0.h()))
    rows = []

    def observe(state):
        Mu = state.M @ state.U
        base = state.U[:, 0]
        norm = np.sqrt(base @ (state.M @ base))
        diffs = []
        for j in range(1, len(variants)):
            d = state.U[:, j] - base
            diffs.append(np.sqrt(d @ (state.M @ d)))
        rows.append((state.t, norm, diffs, Mu.sum(axis=0)))

    stepper = Stepper(problem, mesh0, grid, cfg.scheme, "lagrangian", cfg.solver, cfg.rk_substeps,
                      cfg.quadrature_degree, start_substeps=cfg.start_substeps)
    stepper.run(U0=U0, callback=observe)
    times = np.array([r[0] for r in rows])
    result = PeriodicResult(
        times=times,
        norm_const=np.array([r[1] for r in rows]),
        diffs={v: np.array([r[2][j] for r in rows]) for j, v in enumerate(variants[1:])},
        mass=np.array([r[3] for r in rows]),
        variants=variants,
    )
    out = _mode_dir(cfg, "lagrangian")
    header = ("time", "norm_ic1") + tuple(f"diff_ic{v}" for v in variants[1:])
    table = [(t, n) + tuple(result.diffs[v][i] for v in variants[1:])
             for i, (t, n) in enumerate(zip(times, result.norm_const))]
    write_table_csv(os.path.join(out, "periodic_diff.csv"), header, table)
    write_mass_csv(os.path.join(out, "mass.csv"), times, result.mass, [f"ic{v}" for v in variants])
    return result


def run(cfg: RunConfig):
    os.makedirs(cfg.output_dir, exist_ok=True)
    runners = {1: run_example1, 2: run_example2, 3: run_example3, 4: run_example4}
    return runners[cfg.example](cfg)
