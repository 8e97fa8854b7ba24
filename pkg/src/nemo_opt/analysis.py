"""Theory audits: interpolation error, projection norms, convergence envelopes.

All bounds are evaluated for the unit-scaled transfer pair
``(P / sqrt(c), sqrt(c) R)``, which produces the same coarse step as
``(P, R)`` but satisfies ``R = P^T``.  The selection threshold ``kappa``
is rescaled accordingly (``sqrt(c) * kappa``) so that the coarse-step
decrease constant is the one the iteration actually guarantees.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple

import numpy as np
import scipy.sparse as sp

from .core import InvalidConfigError, SolverConfig, Trace
from .operators import TransferPair
from .problems import ProblemConstants

__all__ = [
    "CheckResult",
    "AuditReport",
    "InvalidInputError",
    "interpolation_error_audit",
    "prolong_restrict_formula",
    "projection_norm_audit",
    "projection_operator",
    "fine_step_constant",
    "effective_constants",
    "convergence_audit",
    "composite_rate_decomposition",
    "corollary_bound",
    "composite_rate_audit",
    "restricted_gradient_audit",
    "Thresholds",
    "thresholds",
    "smoothing_metric",
    "smoothing_complementarity",
    "level_set_radius",
]

ROUNDING = 1e-12


class InvalidInputError(ValueError):
    """An audit was asked to check a step it does not apply to."""


@dataclass(frozen=True)
class CheckResult:
    """One audited inequality ``observed <relation> bound``.

    ``tolerance`` is the absolute slack granted to the comparison; skipped
    checks carry ``passed=True`` and a note explaining why.
    """

    name: str
    observed: float
    bound: float
    passed: bool
    tolerance: float = 0.0
    relation: str = "<="
    skipped: bool = False
    note: str = ""


def _check(name, observed, bound, relation="<=", tolerance=0.0, note="") -> CheckResult:
    observed, bound = float(observed), float(bound)
    if relation == "<=":
        ok = observed <= bound + tolerance
    elif relation == ">=":
        ok = observed >= bound - tolerance
    else:
        raise ValueError(f"unknown relation {relation!r}")
    return CheckResult(name, observed, bound, bool(ok), float(tolerance), relation, note=note)


def _skip(name, note) -> CheckResult:
    return CheckResult(name, math.nan, math.nan, True, skipped=True, note=note)


class AuditReport:
    """Append-only collection of check results and derived quantities."""

    CSV_COLUMNS = ("name", "relation", "observed", "bound", "tolerance", "passed",
                   "skipped", "note")

    def __init__(self, title: str = ""):
        self.title = title
        self._checks: list[CheckResult] = []
        self._quantities: dict[str, float] = {}

    def add(self, check: CheckResult) -> CheckResult:
        if not isinstance(check, CheckResult):
            raise TypeError("only CheckResult instances can be added")
        self._checks.append(check)
        return check

    def extend(self, other: "AuditReport | Iterable[CheckResult]") -> None:
        checks = other.checks if isinstance(other, AuditReport) else other
        for c in checks:
            self.add(c)
        if isinstance(other, AuditReport):
            for k, v in other.quantities.items():
                self.record(k, v)

    def record(self, name: str, value: float) -> None:
        """Store a derived quantity; an existing name cannot be overwritten."""
        if name in self._quantities and not _same(self._quantities[name], value):
            raise ValueError(f"quantity {name!r} already recorded")
        self._quantities[name] = float(value)

    @property
    def checks(self) -> tuple[CheckResult, ...]:
        return tuple(self._checks)

    @property
    def quantities(self) -> dict[str, float]:
        return dict(self._quantities)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self._checks)

    def failures(self) -> list[CheckResult]:
        return [c for c in self._checks if not c.passed]

    def __len__(self):
        return len(self._checks)

    def __iter__(self):
        return iter(self._checks)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_COLUMNS)
        for c in self._checks:
            w.writerow([c.name, c.relation, repr(c.observed), repr(c.bound),
                        repr(c.tolerance), int(c.passed), int(c.skipped), c.note])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [self.title] if self.title else []
        for c in self._checks:
            if c.skipped:
                lines.append(f"SKIP  {c.name}: {c.note}")
                continue
            tag = "PASS" if c.passed else "FAIL"
            line = f"{tag}  {c.name}: {c.observed:.6g} {c.relation} {c.bound:.6g}"
            if c.note:
                line += f"  ({c.note})"
            lines.append(line)
        for k, v in self._quantities.items():
            lines.append(f"      {k} = {v:.6g}")
        n_fail = len(self.failures())
        lines.append(f"{len(self._checks) - n_fail}/{len(self._checks)} checks passed")
        return "\n".join(lines) + "\n"


def _same(a, b) -> bool:
    return a == b or (math.isnan(a) and math.isnan(b))


def _dense(M) -> np.ndarray:
    return M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)


# ---------------------------------------------------------------------------
# interpolation error


def prolong_restrict_formula(r) -> np.ndarray:
    """``P R r`` for the 1D linear-interpolation pair, entry by entry.

    Even (1-based) nodes average their neighbours with weights 1/4, 1/2, 1/4;
    odd nodes use the five-point weights 1/8, 1/4, 1/4, 1/4, 1/8.  The
    vector is padded with zero Dirichlet values and odd reflections beyond
    them, which is what zero coarse boundary values amount to.
    """
    r = np.asarray(r, dtype=float)
    n = r.shape[0]
    if n < 3 or n % 2 == 0:
        raise ValueError(f"vector length must be odd and >= 3, got {n}")
    # s[k + 1] = r_k for k = -1..N+1 (1-based r_k)
    s = np.concatenate(([-r[0], 0.0], r, [0.0, -r[-1]]))
    j = np.arange(1, n + 1)
    out = np.empty(n)
    ev = j % 2 == 0
    je, jo = j[ev] + 1, j[~ev] + 1
    out[ev] = 0.25 * (s[je - 1] + 2 * s[je] + s[je + 1])
    out[~ev] = 0.125 * (s[jo - 2] + 2 * s[jo - 1] + 2 * s[jo] + 2 * s[jo + 1] + s[jo + 2])
    return out


def interpolation_error_audit(r, pair: TransferPair, A) -> AuditReport:
    """Check ``||(I - PR) r||_inf <= 9/(4N^2) ||A r||_inf`` and the entrywise
    form of ``P R r`` for a 1D pair on ``N - 1`` fine nodes."""
    r = np.asarray(r, dtype=float)
    N = pair.fine_dim + 1
    if r.shape != (pair.fine_dim,) or A.shape != (pair.fine_dim, pair.fine_dim):
        raise ValueError(f"dimension mismatch: r {r.shape}, A {A.shape}, "
                         f"pair fine dimension {pair.fine_dim}")
    if N % 2 or pair.coarse_dim != N // 2 - 1:
        raise ValueError("pair is not a 1D one-level interpolation pair")
    PRr = pair.prolong(pair.restrict(r))
    lhs = np.abs(r - PRr).max()
    Ar = np.abs(A @ r).max()
    scale = max(np.abs(r).max(), 1e-300)
    rep = AuditReport("interpolation error")
    rep.add(_check("interpolation_error_inf", lhs, 9.0 / (4.0 * N * N) * Ar,
                   tolerance=ROUNDING * scale))
    dev = np.abs(PRr - prolong_restrict_formula(r)).max()
    rep.add(_check("prolong_restrict_entrywise", dev, 0.0, tolerance=1e-13 * max(scale, 1.0)))
    return rep


# ---------------------------------------------------------------------------
# projection norm and coarse spectrum


def projection_operator(H, pair: TransferPair) -> np.ndarray:
    """Dense ``I - P (R H P)^{-1} R H``."""
    P, R, Hd = _dense(pair.P), _dense(pair.R), _dense(H)
    RHP = R @ Hd @ P
    return np.eye(P.shape[0]) - P @ np.linalg.solve(RHP, R @ Hd)


def projection_norm_audit(H, pair: TransferPair, mu: float, L: float,
                          rtol: float = 1e-10) -> AuditReport:
    """Bounds ``1 <= ||T||_2 <= sqrt(L/mu)`` for the coarse projection ``T``
    and ``mu/xi^2 <= eig(R H P) <= L omega^2``.

    Skipped when the coarse space is the whole space (``T`` is then zero).
    """
    rep = AuditReport("projection norm")
    N, n = pair.fine_dim, pair.coarse_dim
    if H.shape != (N, N):
        raise ValueError(f"H has shape {H.shape}, pair fine dimension is {N}")
    if n >= N:
        note = "coarse space equals fine space; projection is zero"
        rep.add(_skip("projection_norm_lower", note))
        rep.add(_skip("projection_norm_upper", note))
        return rep
    unit = pair.unit_scaled()
    T = projection_operator(H, unit)
    tn = np.linalg.norm(T, 2)
    rep.add(_check("projection_norm_lower", tn, 1.0, ">=", rtol))
    upper = math.sqrt(L / mu)
    rep.add(_check("projection_norm_upper", tn, upper, "<=", rtol * upper))
    RHP = _dense(unit.R) @ _dense(H) @ _dense(unit.P)
    ev = np.linalg.eigvalsh(0.5 * (RHP + RHP.T))
    lo, hi = mu / unit.xi ** 2, L * unit.omega ** 2
    rep.add(_check("coarse_spectrum_lower", ev[0], lo, ">=", rtol * hi))
    rep.add(_check("coarse_spectrum_upper", ev[-1], hi, "<=", rtol * hi))
    return rep


# ---------------------------------------------------------------------------
# global convergence


def fine_step_constant(config: SolverConfig, constants: ProblemConstants) -> float:
    """Per-step decrease constant of the fine step, ``f_k - f_{k+1} >= c ||g||^2``.

    ``constants.lambda_h`` wins when set; otherwise the Newton value
    ``rho1 mu / L^2`` or the steepest-descent value ``rho1 / L``.
    """
    if constants.lambda_h is not None:
        return constants.lambda_h
    if config.fine_variant == "newton":
        return config.rho1 * constants.mu / constants.L ** 2
    if config.fine_variant == "steepest_descent":
        return config.rho1 / constants.L
    raise InvalidConfigError("custom metric fine steps need constants.lambda_h")


def effective_constants(pair: TransferPair, config: SolverConfig) -> tuple[float, float, float]:
    """``(kappa, omega, xi)`` for the unit-scaled pair."""
    unit = pair.unit_scaled()
    kappa = math.sqrt(pair.c) * config.resolved_kappa(pair)
    return kappa, unit.omega, unit.xi


def coarse_step_constant(constants, pair, config) -> float:
    kappa, omega, _ = effective_constants(pair, config)
    return (config.rho1 * kappa ** 2 * config.beta_ls * constants.mu
            / (omega ** 2 * constants.L ** 2))


def level_set_radius(x0, x_star, constants: ProblemConstants) -> float:
    """Over-bound ``sqrt(L/mu) ||x0 - x*||`` of the initial level-set radius."""
    return math.sqrt(constants.L / constants.mu) * float(np.linalg.norm(np.asarray(x0) - x_star))


def smoothing_metric(A) -> Callable[[np.ndarray, np.ndarray], float]:
    """Return ``m(x, x_star) = ||A (x - x_star)||``."""
    def metric(x, x_star):
        return float(np.linalg.norm(A @ (np.asarray(x) - x_star)))
    return metric


class Thresholds(NamedTuple):
    eta: float
    Lambda: float
    max_coarse_bound: float
    smoothing_metric_fn: Callable | None


def thresholds(constants: ProblemConstants, pair: TransferPair, config: SolverConfig,
               R0: float, laplacian=None) -> Thresholds:
    """Unit-step radius ``eta``, rate constant ``Lambda``, coarse-step count bound.

    ``max_coarse_bound = (omega/eps)^2 R0^2 / Lambda^2 - 2`` uses the
    operator norm of the actual restriction since the selection test does.
    """
    if not 0 < config.rho1 < 0.5:
        raise InvalidConfigError(f"rho1 must lie in (0, 0.5), got {config.rho1}")
    eta = math.inf if constants.M == 0 else \
        3.0 * constants.mu ** 2 * (1.0 - 2.0 * config.rho1) / constants.M
    Lam = min(fine_step_constant(config, constants),
              coarse_step_constant(constants, pair, config))
    bound = (pair.omega / config.epsilon) ** 2 * R0 ** 2 / Lam ** 2 - 2.0
    fn = smoothing_metric(laplacian) if laplacian is not None else None
    return Thresholds(eta, Lam, bound, fn)


def convergence_audit(trace: Trace, constants: ProblemConstants, config: SolverConfig,
                      f_star: float | None, R0: float | None, pair: TransferPair,
                      rtol: float = 1e-10) -> AuditReport:
    """Per-coarse-step decrease, the ``R0^2 / (Lambda (2 + k))`` envelope and
    the coarse-step count bound, evaluated along a finished trace."""
    rep = AuditReport("convergence")
    if f_star is None or R0 is None:
        rep.add(_skip("sublinear_envelope", "f_star or R0 not supplied"))
        return rep
    th = thresholds(constants, pair, config, R0)
    lam_h = fine_step_constant(config, constants)
    c_coarse = coarse_step_constant(constants, pair, config)
    for name, v in (("Lambda_h", lam_h), ("Lambda", th.Lambda), ("R0", R0),
                    ("eta", th.eta), ("max_coarse_bound", th.max_coarse_bound)):
        rep.record(name, v)

    f = trace.f_values
    g = trace.grad_norms
    slack = rtol * max(1.0, np.abs(f).max())
    for i, rec in enumerate(trace.records):
        if rec.step_kind != "coarse":
            continue
        rep.add(_check(f"coarse_decrease[k={rec.k}]", f[i] - f[i + 1],
                       c_coarse * g[i] ** 2, ">=", slack))

    k = np.arange(f.shape[0])
    gap = f - f_star
    env = R0 ** 2 / (th.Lambda * (2.0 + k))
    worst = int(np.argmax(gap - env))
    rep.add(_check("sublinear_envelope", gap[worst], env[worst], "<=", slack,
                   note=f"tightest at k={worst} of {len(k) - 1}"))

    n_coarse = trace.coarse_iterations
    note = "bound is vacuous" if th.max_coarse_bound > 1e12 else ""
    rep.add(_check("coarse_step_count", n_coarse, th.max_coarse_bound, note=note))
    return rep


# ---------------------------------------------------------------------------
# local rates


def restricted_gradient_audit(g_k, g_next, pair: TransferPair,
                              constants: ProblemConstants) -> AuditReport:
    """After a unit coarse step,
    ``||R g_{k+1}|| <= omega^3 xi^4 M / (2 mu^2) ||R g_k||^2``."""
    unit = pair.unit_scaled()
    rk = float(np.linalg.norm(unit.restrict(g_k)))
    rn = float(np.linalg.norm(unit.restrict(g_next)))
    coef = unit.omega ** 3 * unit.xi ** 4 * constants.M / (2.0 * constants.mu ** 2)
    rep = AuditReport("restricted gradient")
    rep.add(_check("restricted_gradient_quadratic", rn, coef * rk ** 2,
                   tolerance=1e-10 * rk + 1e-12))
    return rep


def composite_rate_decomposition(x_k, x_next, x_star, H_k, pair: TransferPair,
                                 constants: ProblemConstants, step_kind: str = "coarse",
                                 alpha: float = 1.0) -> tuple[float, float, float]:
    """Split the error after a unit coarse step into a linear and a quadratic part.

    Returns
    -------
    r1_term : float
        ``||I - P (R H P)^{-1} R H|| * ||(I - PR)(x_k - x*)||``.
    r2_term : float
        ``M omega^2 xi^2 / (2 mu) * ||x_k - x*||^2``.
    lhs : float
        ``||x_next - x*||``.
    """
    if step_kind != "coarse" or alpha != 1.0:
        raise InvalidInputError(
            f"decomposition needs a unit coarse step, got {step_kind} with alpha={alpha}")
    e = np.asarray(x_k, dtype=float) - x_star
    lhs = float(np.linalg.norm(np.asarray(x_next) - x_star))
    en = float(np.linalg.norm(e))
    if en == 0.0:
        return 0.0, 0.0, lhs
    unit = pair.unit_scaled()
    T = projection_operator(H_k, unit)
    smooth_err = e - unit.prolong(unit.restrict(e))
    r1 = float(np.linalg.norm(T, 2) * np.linalg.norm(smooth_err))
    r2 = constants.M * unit.omega ** 2 * unit.xi ** 2 / (2.0 * constants.mu) * en ** 2
    return r1, float(r2), lhs


def corollary_bound(x_k, x_star, A, constants: ProblemConstants) -> float:
    """``9/(4 N^{3/2}) sqrt(L/mu) ||A (x_k - x*)||`` for the 1D Laplacian on
    ``N - 1`` nodes."""
    N = A.shape[0] + 1
    return (9.0 / (4.0 * N ** 1.5) * math.sqrt(constants.L / constants.mu)
            * float(np.linalg.norm(A @ (np.asarray(x_k) - x_star))))


def composite_rate_audit(trace: Trace, x_star, hessian, pair: TransferPair,
                         constants: ProblemConstants, slack: float = 1e-8,
                         laplacian=None) -> AuditReport:
    """Check the composite bound on every unit coarse step of a trace.

    ``trace`` must carry iterates.  ``hessian`` maps a point to the Hessian
    there.  If ``laplacian`` is given the 1D closed-form bound is also checked.
    """
    if trace.iterates is None:
        raise InvalidInputError("trace was recorded without iterates")
    rep = AuditReport("composite rate")
    for i, rec in enumerate(trace.records):
        if rec.step_kind != "coarse" or rec.alpha != 1.0:
            continue
        x_k, x_next = trace.iterates[i], trace.iterates[i + 1]
        r1, r2, lhs = composite_rate_decomposition(x_k, x_next, x_star, hessian(x_k),
                                                   pair, constants)
        rep.add(_check(f"composite_rate[k={rec.k}]", lhs, r1 + r2, tolerance=slack))
        if laplacian is not None:
            cb = corollary_bound(x_k, x_star, laplacian, constants)
            rep.add(_check(f"composite_rate_closed_form[k={rec.k}]", lhs, cb + r2,
                           tolerance=slack))
    if not len(rep):
        rep.add(_skip("composite_rate", "no unit coarse step in trace"))
    return rep


def smoothing_complementarity(trace: Trace, x_star, A) -> dict:
    """Compare fine and coarse steps on ``||A (x - x*)||`` and on ``f``.

    Returns median relative reductions of the smoothing metric per step kind
    and the share of the total decrease of ``f`` contributed by coarse steps.
    """
    if trace.iterates is None:
        raise InvalidInputError("trace was recorded without iterates")
    metric = smoothing_metric(A)
    m = np.array([metric(x, x_star) for x in trace.iterates])
    f = trace.f_values
    red: dict[str, list[float]] = {"fine": [], "coarse": []}
    drop = {"fine": 0.0, "coarse": 0.0}
    for i, rec in enumerate(trace.records):
        if m[i] > 0:
            red[rec.step_kind].append(1.0 - m[i + 1] / m[i])
        drop[rec.step_kind] += f[i] - f[i + 1]
    total = drop["fine"] + drop["coarse"]
    return {
        "median_reduction_fine": float(np.median(red["fine"])) if red["fine"] else math.nan,
        "median_reduction_coarse": float(np.median(red["coarse"])) if red["coarse"] else math.nan,
        "coarse_share_of_decrease": drop["coarse"] / total if total > 0 else math.nan,
        "fine_steps": len(red["fine"]),
        "coarse_steps": len(red["coarse"]),
    }
