"""Objective oracles: 1D Poisson quadratic and the 2D nonlinear Example 1.

Grid convention for 2D problems: level ``k`` has ``n = 2**k - 1`` interior
nodes per axis with spacing ``h = 1 / (n + 1)``.  Unknown ``i1 * n + i2``
sits at ``(x1, x2) = ((i1 + 1) h, (i2 + 1) h)``, i.e. row-major with ``x2``
varying fastest.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "ObjectiveOracle",
    "ProblemConstants",
    "QuadraticObjective",
    "Example1Objective",
    "NonconvexityWarning",
    "build_laplacian_1d",
    "build_laplacian_2d",
    "build_poisson_1d",
    "poisson_forcing",
    "example1_source",
    "build_example1",
    "estimate_constants",
    "extreme_eigenvalues",
]


class NonconvexityWarning(UserWarning):
    pass


@runtime_checkable
class ObjectiveOracle(Protocol):
    dimension: int

    def value(self, x: np.ndarray) -> float: ...

    def gradient(self, x: np.ndarray) -> np.ndarray: ...

    def hessian(self, x: np.ndarray) -> sp.csr_matrix: ...


@dataclass(frozen=True)
class ProblemConstants:
    """Strong convexity ``mu``, gradient Lipschitz ``L``, Hessian Lipschitz
    ``M`` and the optional fine-step constants ``nu``, ``zeta``, ``lambda_h``.
    """

    mu: float
    L: float
    M: float = 0.0
    nu: float | None = None
    zeta: float | None = None
    lambda_h: float | None = None
    exact: bool = False
    warnings: tuple[str, ...] = ()

    @property
    def convex(self) -> bool:
        return self.mu > 0


@dataclass(frozen=True, eq=False)
class QuadraticObjective:
    """``f(x) = 1/2 x^T A x - b^T x`` with SPD ``A``."""

    A: sp.csr_matrix
    b: np.ndarray
    is_quadratic: bool = field(default=True, init=False)

    @property
    def dimension(self) -> int:
        return self.A.shape[0]

    def value(self, x):
        return float(0.5 * x @ (self.A @ x) - self.b @ x)

    def gradient(self, x):
        return self.A @ x - self.b

    def hessian(self, x=None):
        return self.A

    def value_change(self, x, d, alpha):
        """``f(x + alpha d) - f(x)`` without cancellation."""
        return float(alpha * (self.gradient(x) @ d) + 0.5 * alpha ** 2 * (d @ (self.A @ d)))

    def minimizer(self) -> np.ndarray:
        from .linear_solvers import LinearSystem, direct_spd_solve
        return direct_spd_solve(LinearSystem(self.A, self.b))


@dataclass(frozen=True, eq=False)
class Example1Objective:
    """``f(x) = 1/2 x^T A x + h*lam * sum(x_i^2 e^x_i - e^x_i) - b^T x``."""

    A: sp.csr_matrix
    b: np.ndarray
    h: float
    lam: float = 10.0
    level: int | None = None
    is_quadratic: bool = field(default=False, init=False)

    @property
    def dimension(self) -> int:
        return self.A.shape[0]

    @property
    def weight(self) -> float:
        return self.h * self.lam

    def value(self, x):
        with np.errstate(over="ignore", invalid="ignore"):
            ex = np.exp(x)
            penalty = np.sum((x * x - 1.0) * ex)
            return float(0.5 * x @ (self.A @ x) + self.weight * penalty - self.b @ x)

    def gradient(self, x):
        with np.errstate(over="ignore", invalid="ignore"):
            return self.A @ x + self.weight * np.exp(x) * (x * x + 2.0 * x - 1.0) - self.b

    def value_change(self, x, d, alpha):
        """``f(x + alpha d) - f(x)`` without cancellation."""
        s = alpha * d
        with np.errstate(over="ignore", invalid="ignore"):
            # (t^2 - 1) e^t at t = x + s minus at t = x
            dpen = np.exp(x) * (((x + s) ** 2 - 1.0) * np.expm1(s) + s * (2.0 * x + s))
            quad = s @ (self.A @ x - self.b) + 0.5 * (s @ (self.A @ s))
            return float(quad + self.weight * np.sum(dpen))

    def penalty_curvature(self, x) -> np.ndarray:
        """Diagonal of the penalty Hessian, ``h lam e^x (x^2 + 4x + 1)``."""
        with np.errstate(over="ignore", invalid="ignore"):
            return self.weight * np.exp(x) * (x * x + 4.0 * x + 1.0)

    def hessian(self, x):
        return sp.csr_matrix(self.A + sp.diags(self.penalty_curvature(x)))

    def curvature_flag(self, x) -> bool:
        """True if some coordinate lies where the penalty curvature is negative."""
        lo, hi = -2.0 - np.sqrt(3.0), -2.0 + np.sqrt(3.0)
        return bool(np.any((x > lo) & (x < hi)))


def build_laplacian_1d(N: int) -> sp.csr_matrix:
    """``N**2 * tridiag(-1, 2, -1)`` of size ``N - 1``."""
    if N < 2:
        raise ValueError(f"N must be >= 2, got {N}")
    n = N - 1
    T = sp.diags([-np.ones(n - 1), 2.0 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1])
    return sp.csr_matrix(float(N) ** 2 * T)


def build_laplacian_2d(level: int) -> sp.csr_matrix:
    """Nine-point stencil ``1/3 [-1 -1 -1; -1 8 -1; -1 -1 -1]`` with
    homogeneous Dirichlet boundary, ``(2**level - 1)**2`` unknowns."""
    if level < 2:
        raise ValueError(f"level must be >= 2, got {level}")
    n = 2 ** level - 1
    band = sp.diags([np.ones(n - 1), np.ones(n), np.ones(n - 1)], [-1, 0, 1])
    # all-ones 3x3 stencil = kron(band, band)
    A = (9.0 * sp.identity(n * n) - sp.kron(band, band)) / 3.0
    return sp.csr_matrix(A)


def poisson_forcing(q):
    q = np.asarray(q, dtype=float)
    return (np.sin(4 * np.pi * q) + 8 * np.sin(32 * np.pi * q)
            + 16 * np.sin(64 * np.pi * q))


def build_poisson_1d(N: int) -> QuadraticObjective:
    """Finite-difference 1D Poisson problem on ``N - 1`` interior nodes."""
    if N < 4:
        raise ValueError(f"N must be >= 4, got {N}")
    q = np.arange(1, N) / N
    return QuadraticObjective(build_laplacian_1d(N), poisson_forcing(q))


def example1_source(x1, x2):
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    u = x1 ** 2 - x1 ** 3
    return (9 * np.pi ** 2 + np.exp(u * np.sin(3 * np.pi * x2)) * u + 6 * x1 - 2) \
        * np.sin(3 * np.pi * x1)


def build_example1(level: int, lam: float = 10.0) -> Example1Objective:
    """Example 1 on the 2D grid of the given level (see module docstring)."""
    if level < 2:
        raise ValueError(f"level must be >= 2, got {level}")
    n = 2 ** level - 1
    h = 1.0 / (n + 1)
    coords = h * np.arange(1, n + 1)
    X1, X2 = np.meshgrid(coords, coords, indexing="ij")
    b = example1_source(X1.ravel(), X2.ravel())
    return Example1Objective(build_laplacian_2d(level), b, h, lam, level)


def extreme_eigenvalues(H) -> tuple[float, float]:
    """Smallest and largest eigenvalue of a symmetric matrix."""
    if sp.issparse(H) and H.shape[0] > 2000:
        opts = dict(k=1, tol=1e-10, maxiter=5000, return_eigenvectors=False)
        hi = spla.eigsh(H, which="LA", **opts)[0]
        try:
            lo = spla.eigsh(sp.csc_matrix(H), sigma=0, which="LM", **opts)[0]
        except RuntimeError:
            lo = spla.eigsh(H, which="SA", **opts)[0]
        return float(lo), float(hi)
    dense = H.toarray() if sp.issparse(H) else np.asarray(H)
    ev = np.linalg.eigvalsh(dense)
    return float(ev[0]), float(ev[-1])


def _spectral_norm(H) -> float:
    lo, hi = extreme_eigenvalues(H)
    return max(abs(lo), abs(hi))


def estimate_constants(oracle, sample_count: int, *, points=None, seed: int = 0,
                       scale: float = 1.0, center=None) -> ProblemConstants:
    """Estimate ``mu``, ``L`` and ``M`` for an oracle.

    Quadratic oracles get exact extreme eigenvalues and ``M = 0``.  For
    nonlinear oracles the Hessian is evaluated at ``sample_count`` points
    (``points`` if given, otherwise Gaussian samples with standard deviation
    ``scale`` around ``center``); ``mu`` and ``L`` are the extreme
    eigenvalues seen, ``M`` the largest ratio
    ``||H(x) - H(y)|| / ||x - y||`` over consecutive sample pairs.  A
    nonpositive ``mu`` is reported through ``warnings``, not raised.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    if getattr(oracle, "is_quadratic", False):
        mu, L = extreme_eigenvalues(oracle.hessian(None))
        return ProblemConstants(mu=mu, L=L, M=0.0, exact=True)

    if points is None:
        rng = np.random.default_rng(seed)
        c0 = np.zeros(oracle.dimension) if center is None else np.asarray(center)
        points = c0 + scale * rng.standard_normal((sample_count, oracle.dimension))
    points = np.asarray(points, dtype=float)[:max(sample_count, 1)]

    mus, Ls, Ms = [], [], []
    prev = None
    for x in points:
        H = oracle.hessian(x)
        lo, hi = extreme_eigenvalues(H)
        mus.append(lo)
        Ls.append(hi)
        if prev is not None:
            dx = np.linalg.norm(x - prev[0])
            if dx > 0:
                Ms.append(_spectral_norm(H - prev[1]) / dx)
        prev = (x, H)
    mu, L = min(mus), max(Ls)
    notes = ()
    if mu <= 0:
        msg = f"indefinite Hessian sampled (min eigenvalue {mu:.3e})"
        warnings.warn(msg, NonconvexityWarning, stacklevel=2)
        notes = (msg,)
    return ProblemConstants(mu=mu, L=L, M=max(Ms, default=0.0), warnings=notes)
