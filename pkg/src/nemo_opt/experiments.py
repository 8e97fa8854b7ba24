"""Experiment configuration, runs and variant comparison."""
from __future__ import annotations

import configparser
import csv
import io
import os
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .core import InvalidConfigError, SolverConfig, Trace, initial_point, nemo_solve, newton_solve
from .operators import TransferPair, build_interp_1d, build_interp_2d_levels
from .problems import build_example1, build_poisson_1d

__all__ = [
    "OUTPUT_ENV",
    "ExperimentConfig",
    "ExperimentResult",
    "load_config",
    "parse_config",
    "build_problem",
    "nemo_pair",
    "multigrid_pair",
    "starting_point",
    "run_experiment",
    "VARIANTS",
    "ComparisonRow",
    "compare_variants",
    "format_table",
    "table_csv",
]

OUTPUT_ENV = "NEMO_OUTPUT_DIR"
PROBLEMS = ("poisson1d", "example1")
VARIANTS = ("newton_only", "nemo_direct", "nemo_two_grid")
INITS = ("gaussian", "zeros")

EXIT_CONVERGED = 0
EXIT_ERROR = 1
EXIT_ITERATION_LIMIT = 2


@dataclass(frozen=True)
class ExperimentConfig:
    """Problem, solver parameters and output location of one experiment.

    Levels are absolute grid levels (level ``k`` has ``(2**k - 1)**2``
    unknowns).  ``init=None`` picks ``zeros`` for the Poisson problem and
    a seeded Gaussian for Example 1.
    """

    problem: str = "example1"
    N: int = 64
    fine_level: int = 5
    nemo_coarse_level: int | None = None
    mg_coarse_level: int | None = None
    lam: float = 10.0
    solver: SolverConfig = field(default_factory=SolverConfig)
    init: str | None = None
    init_scale: float = 5.0
    output_dir: str = "."
    trace_name: str = "trace.csv"

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise InvalidConfigError(f"problem must be one of {PROBLEMS}, got {self.problem!r}")
        if self.init is not None and self.init not in INITS:
            raise InvalidConfigError(f"init must be one of {INITS}, got {self.init!r}")
        if self.problem == "poisson1d":
            if self.N < 4 or self.N % 2:
                raise InvalidConfigError(f"N must be even and >= 4, got {self.N}")
            return
        if self.fine_level < 3:
            raise InvalidConfigError(f"fine_level must be >= 3, got {self.fine_level}")
        for name in ("nemo_coarse_level", "mg_coarse_level"):
            lev = getattr(self, name)
            if lev is not None and not 1 <= lev < self.fine_level:
                raise InvalidConfigError(
                    f"{name}={lev} must lie in [1, fine_level={self.fine_level})")

    @property
    def coarse_level(self) -> int:
        if self.nemo_coarse_level is not None:
            return self.nemo_coarse_level
        return max(self.fine_level - 2, 1)

    @property
    def resolved_init(self) -> str:
        if self.init is not None:
            return self.init
        return "zeros" if self.problem == "poisson1d" else "gaussian"


@dataclass
class ExperimentResult:
    trace: Trace
    wall_time: float
    variant: str
    coarse_level: int | None
    coarse_variables: int | None
    trace_path: Path | None = None

    @property
    def exit_code(self) -> int:
        return {"converged": EXIT_CONVERGED,
                "iteration_limit": EXIT_ITERATION_LIMIT}.get(self.trace.status, EXIT_ERROR)

    def summary(self) -> str:
        tr = self.trace
        mg = str(tr.inner_iterations) if self.variant == "nemo_two_grid" or \
            tr.inner_iterations else "-"
        return (f"status={tr.status} total_iter={tr.total_iterations} "
                f"fine_iter={tr.fine_iterations} mg_iter={mg} "
                f"wall_time={self.wall_time:.3f}s")


# ---------------------------------------------------------------------------
# config files

_SOLVER_TYPES = {f.name: f.type for f in fields(SolverConfig)}


def _solver_value(key: str, raw: str):
    kind = _SOLVER_TYPES[key]
    if key == "kappa":
        return None if raw.strip().lower() in ("", "none", "auto") else float(raw)
    if key == "masses":
        return tuple(float(v) for v in raw.replace(",", " ").split())
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw.strip()


def parse_config(text: str) -> ExperimentConfig:
    """Parse INI-style text with ``[problem]``, ``[solver]`` and ``[output]``.

    Raises
    ------
    InvalidConfigError
        On unknown keys, malformed values or violated parameter ranges.
    """
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise InvalidConfigError(f"malformed config: {exc}") from None
    unknown = set(cp.sections()) - {"problem", "solver", "output"}
    if unknown:
        raise InvalidConfigError(f"unknown section(s): {sorted(unknown)}")
    kw: dict = {}
    solver_kw: dict = {}
    try:
        if cp.has_section("problem"):
            for key, raw in cp.items("problem"):
                if key in ("name", "problem"):
                    kw["problem"] = raw.strip()
                elif key in ("n",):
                    kw["N"] = int(raw)
                elif key in ("fine_level", "nemo_coarse_level", "mg_coarse_level"):
                    kw[key] = int(raw)
                elif key in ("lambda", "lam"):
                    kw["lam"] = float(raw)
                else:
                    raise InvalidConfigError(f"unknown [problem] key {key!r}")
        if cp.has_section("solver"):
            for key, raw in cp.items("solver"):
                if key == "init":
                    kw["init"] = raw.strip()
                elif key == "init_scale":
                    kw["init_scale"] = float(raw)
                elif key == "fine_solver":
                    solver_kw["inner_solver"] = raw.strip()
                elif key in _SOLVER_TYPES and key != "metric":
                    solver_kw[key] = _solver_value(key, raw)
                else:
                    raise InvalidConfigError(f"unknown [solver] key {key!r}")
        if cp.has_section("output"):
            for key, raw in cp.items("output"):
                if key in ("dir", "directory", "output_dir"):
                    kw["output_dir"] = raw.strip()
                elif key in ("trace", "trace_name"):
                    kw["trace_name"] = raw.strip()
                else:
                    raise InvalidConfigError(f"unknown [output] key {key!r}")
    except ValueError as exc:
        if isinstance(exc, InvalidConfigError):
            raise
        raise InvalidConfigError(f"bad value: {exc}") from None
    kw["solver"] = SolverConfig(**solver_kw)
    return ExperimentConfig(**kw)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    return parse_config(text)


# ---------------------------------------------------------------------------
# building blocks


def build_problem(cfg: ExperimentConfig):
    if cfg.problem == "poisson1d":
        return build_poisson_1d(cfg.N)
    return build_example1(cfg.fine_level, cfg.lam)


def nemo_pair(cfg: ExperimentConfig, coarse_level: int | None = None) -> TransferPair:
    if cfg.problem == "poisson1d":
        return build_interp_1d(cfg.N)
    return build_interp_2d_levels(coarse_level or cfg.coarse_level, cfg.fine_level)


def multigrid_pair(cfg: ExperimentConfig) -> TransferPair:
    """Two-grid operators; one level below the fine level unless configured."""
    if cfg.problem == "poisson1d":
        return build_interp_1d(cfg.N)
    lev = cfg.mg_coarse_level if cfg.mg_coarse_level is not None else cfg.fine_level - 1
    return build_interp_2d_levels(lev, cfg.fine_level)


def starting_point(cfg: ExperimentConfig, dimension: int) -> np.ndarray:
    if cfg.resolved_init == "zeros":
        return np.zeros(dimension)
    return initial_point(dimension, cfg.solver.seed, cfg.init_scale)


def output_directory(cfg: ExperimentConfig) -> Path:
    return Path(os.environ.get(OUTPUT_ENV) or cfg.output_dir)


def _solve(cfg: ExperimentConfig, variant: str, coarse_level: int | None, problem, x0,
           store_iterates: bool):
    if variant not in VARIANTS:
        raise InvalidConfigError(f"variant must be one of {VARIANTS}, got {variant!r}")
    if variant == "newton_only":
        return newton_solve(problem, cfg.solver, x0, store_iterates=store_iterates), None
    pair = nemo_pair(cfg, coarse_level)
    if variant == "nemo_two_grid":
        solver = replace(cfg.solver, inner_solver="two_grid")
    else:
        solver = replace(cfg.solver, inner_solver="direct")
    mg = multigrid_pair(cfg) if solver.inner_solver == "two_grid" else None
    return nemo_solve(problem, pair, solver, x0, mg_pair=mg,
                      store_iterates=store_iterates), pair


def run_experiment(cfg: ExperimentConfig, variant: str | None = None, *,
                   coarse_level: int | None = None, write: bool = True,
                   store_iterates: bool = False) -> ExperimentResult:
    """Run one solver variant and (optionally) write its trace CSV.

    Without ``variant`` the solver config decides: ``inner_solver=two_grid``
    runs NeMO with the two-grid fine solver, otherwise NeMO with direct solves.
    """
    if variant is None:
        variant = "nemo_two_grid" if cfg.solver.inner_solver == "two_grid" else "nemo_direct"
    problem = build_problem(cfg)
    x0 = starting_point(cfg, problem.dimension)
    t0 = time.perf_counter()
    trace, pair = _solve(cfg, variant, coarse_level, problem, x0, store_iterates)
    wall = time.perf_counter() - t0
    if pair is None:
        level = cfg.fine_level if cfg.problem == "example1" else None
        n_coarse = problem.dimension
    else:
        level = (coarse_level or cfg.coarse_level) if cfg.problem == "example1" else None
        n_coarse = pair.coarse_dim
    result = ExperimentResult(trace, wall, variant, level, n_coarse)
    if write:
        out = output_directory(cfg)
        out.mkdir(parents=True, exist_ok=True)
        path = out / cfg.trace_name
        trace.write_csv(path)
        result.trace_path = path
    return result


# ---------------------------------------------------------------------------
# comparison tables


@dataclass(frozen=True)
class ComparisonRow:
    variant: str
    coarse_level: int | None
    coarse_variables: int | None
    total_iter: int
    fine_iter: int
    mg_iter: int | None
    wall_time: float
    status: str

    def cells(self) -> list[str]:
        dash = lambda v: "-" if v is None else str(v)  # noqa: E731
        return [self.variant, dash(self.coarse_level), dash(self.coarse_variables),
                str(self.total_iter), str(self.fine_iter), dash(self.mg_iter),
                f"{self.wall_time:.2f}", self.status]


TABLE_HEADER = ["variant", "coarse level", "coarse variables", "total iter", "fine iter",
                "mg iter", "wall time", "status"]


def compare_variants(cfg: ExperimentConfig, variants, coarse_levels=None) -> list[ComparisonRow]:
    """Run each variant from the same starting point.

    NeMO variants run once per entry of ``coarse_levels`` (default: the
    configured coarse level).
    """
    variants = list(variants)
    if len(variants) < 2:
        raise InvalidConfigError("compare needs at least two variants")
    for v in variants:
        if v not in VARIANTS:
            raise InvalidConfigError(f"unknown variant {v!r}; choose from {VARIANTS}")
    if cfg.problem == "poisson1d" or not coarse_levels:
        coarse_levels = [None]
    else:
        for lev in coarse_levels:
            if not 1 <= lev < cfg.fine_level:
                raise InvalidConfigError(f"coarse level {lev} must lie below fine_level")
    rows = []
    for v in variants:
        for lev in ([None] if v == "newton_only" else coarse_levels):
            res = run_experiment(cfg, v, coarse_level=lev, write=False)
            tr = res.trace
            rows.append(ComparisonRow(
                variant=v, coarse_level=res.coarse_level,
                coarse_variables=res.coarse_variables,
                total_iter=tr.total_iterations, fine_iter=tr.fine_iterations,
                mg_iter=tr.inner_iterations if v == "nemo_two_grid" else None,
                wall_time=res.wall_time, status=tr.status))
    return rows


def format_table(rows: list[ComparisonRow]) -> str:
    cells = [TABLE_HEADER] + [r.cells() for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(TABLE_HEADER))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells]
    return "\n".join(lines) + "\n"


def table_csv(rows: list[ComparisonRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([h.replace(" ", "_") for h in TABLE_HEADER])
    for r in rows:
        w.writerow(r.cells())
    return buf.getvalue()
