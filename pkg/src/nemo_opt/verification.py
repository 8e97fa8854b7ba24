"""Fixed-seed audit batteries behind ``nemo-opt verify``."""
from __future__ import annotations

import numpy as np

from .analysis import (AuditReport, CheckResult, composite_rate_audit, convergence_audit,
                       interpolation_error_audit, level_set_radius, projection_norm_audit,
                       restricted_gradient_audit)
from .core import SolverConfig, nemo_solve
from .operators import TransferPair, build_interp_1d, build_interp_2d_levels, validate_pair
from .problems import build_laplacian_1d, build_poisson_1d, estimate_constants

__all__ = ["SCOPES", "verify_suite", "operator_audits", "theory_audits", "random_spd"]

SCOPES = ("all", "operators", "theory")


def random_spd(rng: np.random.Generator, n: int, cond: float = 1e3) -> np.ndarray:
    """Random SPD matrix with log-uniform spectrum in ``[1, cond]``."""
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    ev = np.exp(rng.uniform(0.0, np.log(cond), n))
    return (Q * ev) @ Q.T


def operator_audits(seed: int = 0, vectors: int = 100) -> AuditReport:
    rep = AuditReport("operators")
    pairs = [(f"interp_1d[N={N}]", build_interp_1d(N)) for N in (8, 32, 128, 512)]
    pairs += [(f"interp_2d[{lo}->{hi}]", build_interp_2d_levels(lo, hi))
              for lo, hi in ((2, 3), (2, 4), (3, 5))]
    for name, pair in pairs:
        v = validate_pair(pair)
        rep.add(CheckResult(f"validate_pair {name}", v.max_transpose_deviation, 1e-12,
                            v.passed, note="; ".join(v.messages)))
    rng = np.random.default_rng(seed)
    for N in (8, 32, 128, 512):
        pair, A = build_interp_1d(N), build_laplacian_1d(N)
        worst_ratio, worst_dev, ok = 0.0, 0.0, True
        for _ in range(vectors):
            sub = interpolation_error_audit(rng.standard_normal(N - 1), pair, A)
            ok &= sub.passed
            err, form = sub.checks
            if err.bound > 0:
                worst_ratio = max(worst_ratio, err.observed / err.bound)
            worst_dev = max(worst_dev, form.observed)
        rep.add(CheckResult(f"interpolation_error[N={N}]", worst_ratio, 1.0, bool(ok),
                            note=f"worst ratio over {vectors} vectors; "
                                 f"max formula deviation {worst_dev:.1e}"))
    return rep


def theory_audits(seed: int = 0, instances: int = 100) -> AuditReport:
    rep = AuditReport("theory")
    rng = np.random.default_rng(seed)
    fails = 0
    for _ in range(instances):
        H = random_spd(rng, 20)
        P = rng.standard_normal((20, 10))
        ev = np.linalg.eigvalsh(H)
        sub = projection_norm_audit(H, TransferPair(P), ev[0], ev[-1])
        fails += len(sub.failures())
    rep.add(CheckResult("projection_norm_random", fails, 0, fails == 0,
                        note=f"{instances} random SPD instances, dim 20 -> 10"))
    N = 8
    A = build_laplacian_1d(N)
    ev = np.linalg.eigvalsh(A.toarray())
    rep.extend(projection_norm_audit(A, build_interp_1d(N), ev[0], ev[-1]))

    N = 64
    prob, pair = build_poisson_1d(N), build_interp_1d(N)
    x_star = prob.minimizer()
    C = estimate_constants(prob, 1)
    cfg = SolverConfig(fine_variant="steepest_descent", max_iter=5000)
    x0 = np.zeros(prob.dimension)
    trace = nemo_solve(prob, pair, cfg, x0, store_iterates=True)
    rep.add(CheckResult("poisson_trace_converged", trace.total_iterations, cfg.max_iter,
                        trace.converged, note=trace.status))
    R0 = level_set_radius(x0, x_star, C)
    rep.extend(convergence_audit(trace, C, cfg, prob.value(x_star), R0, pair))
    rep.extend(composite_rate_audit(trace, x_star, prob.hessian, pair, C, laplacian=prob.A))
    for i, rec in enumerate(trace.records):
        if rec.step_kind == "coarse" and rec.alpha == 1.0:
            g_k = prob.gradient(trace.iterates[i])
            g_n = prob.gradient(trace.iterates[i + 1])
            for c in restricted_gradient_audit(g_k, g_n, pair, C):
                rep.add(CheckResult(f"{c.name}[k={rec.k}]", c.observed, c.bound, c.passed,
                                    c.tolerance, c.relation))
    return rep


def verify_suite(scope: str = "all", seed: int = 0) -> AuditReport:
    if scope not in SCOPES:
        raise ValueError(f"scope must be one of {SCOPES}, got {scope!r}")
    rep = AuditReport(f"verify {scope}")
    if scope in ("all", "operators"):
        rep.extend(operator_audits(seed))
    if scope in ("all", "theory"):
        rep.extend(theory_audits(seed))
    return rep
