"""Two-level Newton-type multilevel optimization (NeMO).

Each iteration either takes a *coarse correction step*
``d = -P (R H P)^{-1} R g`` built from the Galerkin coarse Hessian, or a
*fine correction step* ``d = -Q^{-1} g`` from a variable-metric method, then
backtracks with the Armijo rule.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .linear_solvers import (LinearSystem, NonConvergenceError,
                             NotPositiveDefiniteError, SPDFactor,
                             direct_spd_solve, galerkin_product, two_grid_solve)
from .operators import RankDeficiencyError, TransferPair

__all__ = [
    "InvalidConfigError",
    "InvalidDirectionError",
    "LineSearchError",
    "SolverConfig",
    "IterationRecord",
    "Trace",
    "TRACE_COLUMNS",
    "galerkin_coarse_hessian",
    "coarse_correction_step",
    "fine_correction_step",
    "select_step",
    "armijo_backtrack",
    "OperatorSchedule",
    "schedule_next_operator",
    "nemo_solve",
    "newton_solve",
    "initial_point",
]

log = logging.getLogger(__name__)

MAX_BACKTRACKS = 60
FINE_VARIANTS = ("newton", "steepest_descent", "custom_metric")
INNER_SOLVERS = ("direct", "two_grid")
SCHEDULES = ("single", "cyclical", "probabilistic")
TRACE_COLUMNS = ("k", "step_kind", "alpha", "f", "grad_norm",
                 "restricted_grad_norm", "chi", "operator_index", "inner_iterations")


class InvalidConfigError(ValueError):
    pass


class InvalidDirectionError(ValueError):
    pass


class LineSearchError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Algorithm parameters.

    ``kappa=None`` means ``n_H / n_h`` of the first operator pair.
    ``masses`` is only used by the probabilistic schedule; ``metric`` only by
    the ``custom_metric`` fine variant.
    """

    kappa: float | None = None
    epsilon: float = 0.1
    rho1: float = 0.01
    beta_ls: float = 0.5
    eps_stop: float = 1e-9
    max_iter: int = 500
    fine_variant: str = "newton"
    inner_solver: str = "direct"
    schedule: str = "single"
    seed: int = 0
    two_grid_tol: float = 0.1
    masses: tuple[float, ...] | None = None
    metric: object = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kappa is not None and not 0 < self.kappa < 1:
            raise InvalidConfigError(f"kappa must lie in (0, 1), got {self.kappa}")
        if not 0 < self.epsilon < 1:
            raise InvalidConfigError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not 0 < self.rho1 < 0.5:
            raise InvalidConfigError(f"rho1 must lie in (0, 0.5), got {self.rho1}")
        if not 0 < self.beta_ls < 1:
            raise InvalidConfigError(f"beta_ls must lie in (0, 1), got {self.beta_ls}")
        if not self.eps_stop > 0:
            raise InvalidConfigError(f"eps_stop must be positive, got {self.eps_stop}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise InvalidConfigError(f"max_iter must be a positive integer, got {self.max_iter}")
        if self.fine_variant not in FINE_VARIANTS:
            raise InvalidConfigError(f"fine_variant must be one of {FINE_VARIANTS}")
        if self.inner_solver not in INNER_SOLVERS:
            raise InvalidConfigError(f"inner_solver must be one of {INNER_SOLVERS}")
        if self.schedule not in SCHEDULES:
            raise InvalidConfigError(f"schedule must be one of {SCHEDULES}")
        if self.fine_variant == "custom_metric" and self.metric is None:
            raise InvalidConfigError("custom_metric needs a metric matrix")
        if self.masses is not None:
            _check_masses(self.masses)

    def resolved_kappa(self, pair: TransferPair) -> float:
        if self.kappa is not None:
            return self.kappa
        return pair.coarse_dim / pair.fine_dim

    def check_pair(self, pair: TransferPair) -> None:
        """``kappa < ||R||``, otherwise coarse steps can never be selected."""
        kappa = self.resolved_kappa(pair)
        norm_R = _restriction_norm(pair)
        if kappa >= norm_R:
            raise InvalidConfigError(
                f"kappa={kappa:.4g} >= ||R||={norm_R:.4g}: coarse steps would never fire")


def _restriction_norm(pair: TransferPair) -> float:
    from .operators import DENSE_NORM_LIMIT, _largest_eig
    R = pair.R
    if max(R.shape) <= DENSE_NORM_LIMIT:
        return float(np.linalg.norm(R.toarray(), 2))
    return float(np.sqrt(_largest_eig(sp.csr_matrix(R @ R.T))))


@dataclass(frozen=True)
class IterationRecord:
    """One NeMO iteration ``x_{k-1} -> x_k``.

    ``step_kind``, ``alpha``, ``chi`` and ``operator_index`` describe the step
    taken; ``f``, ``grad_norm`` and ``restricted_grad_norm`` are evaluated at
    the new iterate ``x_k``.
    """

    k: int
    step_kind: str
    alpha: float
    f: float
    grad_norm: float
    restricted_grad_norm: float | None = None
    chi: float | None = None
    operator_index: int | None = None
    inner_iterations: int = 0


@dataclass
class Trace:
    """Result of a solve: initial state, one record per iteration, final x."""

    records: list[IterationRecord]
    final_x: np.ndarray
    status: str
    x0: np.ndarray
    f0: float
    grad_norm0: float
    restricted_grad_norm0: float | None = None
    message: str = ""
    iterates: list[np.ndarray] | None = None

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def f_values(self) -> np.ndarray:
        return np.array([self.f0] + [r.f for r in self.records])

    @property
    def grad_norms(self) -> np.ndarray:
        return np.array([self.grad_norm0] + [r.grad_norm for r in self.records])

    @property
    def total_iterations(self) -> int:
        return len(self.records)

    @property
    def fine_iterations(self) -> int:
        return sum(r.step_kind == "fine" for r in self.records)

    @property
    def coarse_iterations(self) -> int:
        return sum(r.step_kind == "coarse" for r in self.records)

    @property
    def inner_iterations(self) -> int:
        return sum(r.inner_iterations for r in self.records)

    def to_csv(self) -> str:
        """CSV text: a ``start`` row for ``x_0`` then one row per iteration."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        writer.writerow([0, "start", "", repr(self.f0), repr(self.grad_norm0),
                         _fmt(self.restricted_grad_norm0), "", "", 0])
        for r in self.records:
            writer.writerow([r.k, r.step_kind, repr(r.alpha), repr(r.f),
                             repr(r.grad_norm), _fmt(r.restricted_grad_norm),
                             _fmt(r.chi), "" if r.operator_index is None else r.operator_index,
                             r.inner_iterations])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def from_csv(cls, text: str, status: str = "converged") -> "Trace":
        """Rebuild a trace (without iterates) from :meth:`to_csv` output."""
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows or tuple(rows[0].keys()) != TRACE_COLUMNS:
            raise ValueError("not a trace CSV")
        start, body = rows[0], rows[1:]
        records = [IterationRecord(
            k=int(r["k"]), step_kind=r["step_kind"], alpha=float(r["alpha"]),
            f=float(r["f"]), grad_norm=float(r["grad_norm"]),
            restricted_grad_norm=_parse(r["restricted_grad_norm"]),
            chi=_parse(r["chi"]),
            operator_index=None if r["operator_index"] == "" else int(r["operator_index"]),
            inner_iterations=int(r["inner_iterations"]),
        ) for r in body]
        return cls(records=records, final_x=np.empty(0), status=status,
                   x0=np.empty(0), f0=float(start["f"]),
                   grad_norm0=float(start["grad_norm"]),
                   restricted_grad_norm0=_parse(start["restricted_grad_norm"]))


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def _parse(s: str):
    return None if s == "" else float(s)


# --------------------------------------------------------------------------
# steps
# --------------------------------------------------------------------------

def galerkin_coarse_hessian(H, pair: TransferPair):
    """``R H P`` (symmetrized), checked for positive definiteness.

    Raises
    ------
    RankDeficiencyError
        If ``R H P`` is not positive definite.
    """
    G = galerkin_product(H, pair)
    try:
        SPDFactor(G)
    except NotPositiveDefiniteError as exc:
        raise RankDeficiencyError(f"coarse Hessian R H P is not positive definite: {exc}") from None
    return G


def coarse_correction_step(gradient, H, pair: TransferPair, solver: str = "direct",
                           ) -> tuple[np.ndarray, float]:
    """Coarse correction step and its Newton-decrement analogue.

    Solves ``(R H P) d_H = -R g`` and returns ``d = P d_H`` and
    ``chi = sqrt((R g)^T (R H P)^{-1} R g)``.
    """
    if solver != "direct":
        raise ValueError("coarse systems are solved directly")
    g_H = pair.restrict(gradient)
    if not np.any(g_H):
        return np.zeros(pair.fine_dim), 0.0
    G = galerkin_product(H, pair)
    try:
        factor = SPDFactor(G)
    except NotPositiveDefiniteError as exc:
        raise RankDeficiencyError(f"coarse Hessian R H P is not positive definite: {exc}") from None
    d_H = -direct_spd_solve(LinearSystem(G, g_H), factor)
    chi2 = -float(g_H @ d_H)
    return pair.prolong(d_H), float(np.sqrt(max(chi2, 0.0)))


def fine_correction_step(gradient, metric="identity", H=None, solver: str = "direct",
                         mg_pair: TransferPair | None = None, tol: float = 0.1,
                         ) -> tuple[np.ndarray, int]:
    """Variable-metric step ``d = -Q^{-1} g``.

    ``metric`` is ``"identity"`` (steepest descent), ``"hessian"`` (Newton,
    ``Q = H``) or an explicit SPD matrix.  With ``solver="two_grid"`` the
    system is solved approximately by :func:`two_grid_solve` on ``mg_pair``.

    Returns the direction and the number of inner two-grid cycles.

    Raises
    ------
    NotPositiveDefiniteError
        If the metric is not SPD (direct solver).
    """
    g = np.asarray(gradient, dtype=float)
    if isinstance(metric, str):
        if metric == "identity":
            return -g, 0
        if metric != "hessian":
            raise ValueError(f"unknown metric {metric!r}")
        if H is None:
            raise ValueError("Newton metric needs the Hessian")
        Q = H
    else:
        Q = metric
    system = LinearSystem(Q, -g)
    if solver == "direct":
        return direct_spd_solve(system), 0
    if solver == "two_grid":
        if mg_pair is None:
            raise ValueError("two-grid solver needs an operator pair")
        d, cycles = two_grid_solve(system, mg_pair, tol=tol)
        return d, cycles
    raise ValueError(f"unknown solver {solver!r}")


def select_step(gradient, pair: TransferPair, config: SolverConfig,
                restricted=None) -> str:
    """``"coarse"`` iff ``||R g|| > kappa ||g||`` and ``||R g|| > epsilon``."""
    g_H = pair.restrict(gradient) if restricted is None else restricted
    rg = np.linalg.norm(g_H)
    kappa = config.resolved_kappa(pair)
    if rg > kappa * np.linalg.norm(gradient) and rg > config.epsilon:
        return "coarse"
    return "fine"


def armijo_backtrack(oracle, x, d, config: SolverConfig, f0: float | None = None,
                     g0=None) -> float:
    """Largest ``alpha`` in ``{1, beta, beta^2, ...}`` with
    ``f(x + alpha d) <= f(x) + rho1 alpha g^T d``.

    Oracles with a ``value_change(x, d, alpha)`` method have the decrease
    evaluated directly; this keeps the test meaningful when ``|f|`` is large
    compared with the decrease near convergence.

    Raises
    ------
    InvalidDirectionError
        If ``g^T d >= 0``.
    LineSearchError
        After 60 backtracks.
    """
    f0 = oracle.value(x) if f0 is None else f0
    g0 = oracle.gradient(x) if g0 is None else g0
    slope = float(g0 @ d)
    if not slope < 0:
        raise InvalidDirectionError(f"not a descent direction (g^T d = {slope:.3e})")
    change = getattr(oracle, "value_change", None)
    alpha = 1.0
    for _ in range(MAX_BACKTRACKS + 1):
        if change is not None:
            df = change(x, d, alpha)
        else:
            df = oracle.value(x + alpha * d) - f0
        if df <= config.rho1 * alpha * slope:
            return alpha
        alpha *= config.beta_ls
    raise LineSearchError(f"Armijo condition not met after {MAX_BACKTRACKS} backtracks")


# --------------------------------------------------------------------------
# multiple operators
# --------------------------------------------------------------------------

def _check_masses(masses) -> np.ndarray:
    m = np.asarray(masses, dtype=float)
    if m.ndim != 1 or m.size == 0 or np.any(m <= 0):
        raise InvalidConfigError("probability masses must be strictly positive")
    if abs(m.sum() - 1.0) > 1e-12:
        raise InvalidConfigError(f"probability masses sum to {m.sum()!r}, not 1")
    return m


class OperatorSchedule:
    """Chooses the operator pair for each iteration; indices run from 1 to ``count``."""

    def __init__(self, kind: str, count: int, masses=None, rng=None):
        if kind not in SCHEDULES:
            raise InvalidConfigError(f"schedule must be one of {SCHEDULES}")
        if count < 1:
            raise InvalidConfigError("at least one operator pair is required")
        self.kind = kind
        self.count = count
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._next = 0
        if kind == "probabilistic":
            masses = np.full(count, 1.0 / count) if masses is None else masses
            self.masses = _check_masses(masses)
            if self.masses.size != count:
                raise InvalidConfigError(f"{self.masses.size} masses for {count} operators")
        else:
            self.masses = None

    def next(self) -> int:
        if self.kind == "single":
            return 1
        if self.kind == "cyclical":
            i = self._next
            self._next = (i + 1) % self.count
            return i + 1
        return int(self.rng.choice(self.count, p=self.masses)) + 1


def schedule_next_operator(schedule: OperatorSchedule) -> int:
    return schedule.next()


# --------------------------------------------------------------------------
# main loop
# --------------------------------------------------------------------------

def initial_point(dimension: int, seed: int = 0, scale: float = 5.0) -> np.ndarray:
    """Seeded Gaussian start, ``scale * N(0, 1)`` (PCG64 generator)."""
    return scale * np.random.default_rng(seed).standard_normal(dimension)


def _fine_metric(config: SolverConfig):
    if config.fine_variant == "newton":
        return "hessian"
    if config.fine_variant == "steepest_descent":
        return "identity"
    return config.metric


def _run(oracle, pairs: Sequence[TransferPair], config: SolverConfig, x0,
         mg_pair, store_iterates: bool, use_coarse: bool, callback) -> Trace:
    x = np.array(x0, dtype=float, copy=True)
    rng = np.random.default_rng(config.seed)
    schedule = OperatorSchedule(config.schedule, max(len(pairs), 1), config.masses, rng) \
        if use_coarse else None
    needs_hessian = config.fine_variant == "newton"
    metric = _fine_metric(config)

    f = oracle.value(x)
    g = oracle.gradient(x)
    gnorm = float(np.linalg.norm(g))
    rg0 = float(np.linalg.norm(pairs[0].restrict(g))) if use_coarse else None
    trace = Trace(records=[], final_x=x, status="iteration_limit", x0=x.copy(),
                  f0=f, grad_norm0=gnorm, restricted_grad_norm0=rg0,
                  iterates=[x.copy()] if store_iterates else None)

    try:
        for k in range(1, config.max_iter + 1):
            if gnorm <= config.eps_stop:
                trace.status = "converged"
                break
            idx = schedule.next() if use_coarse else None
            pair = pairs[idx - 1] if use_coarse else None
            g_H = pair.restrict(g) if use_coarse else None
            kind = select_step(g, pair, config, g_H) if use_coarse else "fine"
            H = oracle.hessian(x) if (kind == "coarse" or needs_hessian) else None
            chi = None
            inner = 0
            if kind == "coarse":
                d, chi = coarse_correction_step(g, H, pair)
            else:
                d, inner = fine_correction_step(
                    g, metric, H, config.inner_solver, mg_pair, config.two_grid_tol)
            alpha = armijo_backtrack(oracle, x, d, config, f, g)
            x = x + alpha * d
            f_new = oracle.value(x)
            g = oracle.gradient(x)
            gnorm = float(np.linalg.norm(g))
            rg = float(np.linalg.norm(pair.restrict(g))) if use_coarse else None
            f = f_new
            rec = IterationRecord(k=k, step_kind=kind, alpha=alpha, f=f, grad_norm=gnorm,
                                  restricted_grad_norm=rg, chi=chi,
                                  operator_index=idx, inner_iterations=inner)
            trace.records.append(rec)
            if store_iterates:
                trace.iterates.append(x.copy())
            if callback is not None:
                callback(rec, x)
            log.debug("k=%d %s alpha=%g f=%.12g |g|=%.3e", k, kind, alpha, f, gnorm)
        else:
            if gnorm <= config.eps_stop:
                trace.status = "converged"
    except (LineSearchError, InvalidDirectionError, RankDeficiencyError,
            NotPositiveDefiniteError, NonConvergenceError) as exc:
        trace.status = "error"
        trace.message = f"{type(exc).__name__}: {exc}"
        log.warning("solve stopped at iteration %d: %s", len(trace.records) + 1, exc)
    if trace.status == "iteration_limit":
        trace.message = f"gradient norm {gnorm:.3e} > {config.eps_stop} after {config.max_iter} iterations"
    trace.final_x = x
    return trace


def nemo_solve(oracle, pairs: Sequence[TransferPair] | TransferPair,
               config: SolverConfig, x0=None, *, mg_pair: TransferPair | None = None,
               store_iterates: bool = False, callback=None) -> Trace:
    """Minimize ``oracle`` with two-level NeMO.

    Parameters
    ----------
    oracle : ObjectiveOracle
    pairs : TransferPair or sequence of TransferPair
        Coarse models; more than one requires a ``cyclical`` or
        ``probabilistic`` schedule.
    config : SolverConfig
    x0 : array_like, optional
        Starting point; defaults to :func:`initial_point` with ``config.seed``.
    mg_pair : TransferPair, optional
        Operator pair of the two-grid inner solver (``inner_solver="two_grid"``).
    store_iterates : bool
        Keep every iterate in ``Trace.iterates``.

    Returns
    -------
    Trace
        ``status`` is ``converged``, ``iteration_limit`` or ``error``; solver
        failures are reported there rather than raised.
    """
    if isinstance(pairs, TransferPair):
        pairs = [pairs]
    pairs = list(pairs)
    if not pairs:
        raise InvalidConfigError("nemo_solve needs at least one operator pair")
    for pair in pairs:
        if pair.fine_dim != oracle.dimension:
            raise InvalidConfigError(
                f"pair fine dimension {pair.fine_dim} != problem dimension {oracle.dimension}")
        config.check_pair(pair)
    if len(pairs) > 1 and config.schedule == "single":
        raise InvalidConfigError("several operator pairs need a cyclical or probabilistic schedule")
    _check_inner(config, mg_pair, oracle)
    if x0 is None:
        x0 = initial_point(oracle.dimension, config.seed)
    return _run(oracle, pairs, config, x0, mg_pair, store_iterates, True, callback)


def newton_solve(oracle, config: SolverConfig, x0=None, *,
                 mg_pair: TransferPair | None = None, store_iterates: bool = False,
                 callback=None) -> Trace:
    """Single-level variable-metric method (damped Newton by default):
    the same loop as :func:`nemo_solve` with coarse steps switched off."""
    _check_inner(config, mg_pair, oracle)
    if x0 is None:
        x0 = initial_point(oracle.dimension, config.seed)
    return _run(oracle, [], config, x0, mg_pair, store_iterates, False, callback)


def _check_inner(config, mg_pair, oracle):
    if config.inner_solver == "two_grid":
        if mg_pair is None:
            raise InvalidConfigError("inner_solver=two_grid needs mg_pair")
        if mg_pair.fine_dim != oracle.dimension:
            raise InvalidConfigError("mg_pair does not match the problem dimension")
