"""SPD linear solvers: Cholesky-type direct solve and a two-grid method."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .operators import RankDeficiencyError, TransferPair

__all__ = [
    "LinearSystem",
    "NotPositiveDefiniteError",
    "InvalidSystemError",
    "NonConvergenceError",
    "SPDFactor",
    "direct_spd_solve",
    "SymmetricGaussSeidel",
    "smoother_sweep",
    "galerkin_product",
    "two_grid_solve",
]

SYMMETRY_TOL = 1e-12
DIRECT_RTOL = 1e-12


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """A nonpositive pivot was met while factorizing a supposedly SPD matrix."""


class InvalidSystemError(ValueError):
    pass


class NonConvergenceError(RuntimeError):
    def __init__(self, message, residual=None, iterations=None, x=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.x = x


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """Symmetric system ``matrix @ x = rhs``."""

    matrix: object
    rhs: np.ndarray

    def __post_init__(self):
        A = self.matrix
        if not sp.issparse(A):
            A = np.asarray(A, dtype=float)
            if A.ndim != 2:
                raise InvalidSystemError("matrix must be two-dimensional")
        rhs = np.asarray(self.rhs, dtype=float)
        if A.shape[0] != A.shape[1] or rhs.shape != (A.shape[0],):
            raise InvalidSystemError(
                f"dimension mismatch: matrix {A.shape}, rhs {rhs.shape}")
        asym = abs(A - A.T).max()
        scale = max(abs(A).max(), 1.0)
        if asym > SYMMETRY_TOL * scale:
            raise InvalidSystemError(f"matrix is not symmetric (max |A - A^T| = {asym:.3e})")
        object.__setattr__(self, "matrix", A)
        object.__setattr__(self, "rhs", rhs)

    @property
    def dimension(self) -> int:
        return self.rhs.shape[0]

    def residual(self, x) -> np.ndarray:
        return self.rhs - self.matrix @ x

    def scaled_residual(self, x) -> float:
        nb = np.linalg.norm(self.rhs)
        r = np.linalg.norm(self.residual(x))
        return r / nb if nb > 0 else r


class SPDFactor:
    """Symmetric factorization of an SPD matrix.

    Dense matrices use LAPACK Cholesky.  Sparse matrices use SuperLU with a
    symmetric fill-reducing ordering and diagonal pivoting only, which for a
    symmetric matrix amounts to an ``L D L^T`` factorization; all pivots
    (diagonal of ``U``) must be positive.
    """

    def __init__(self, A):
        self.shape = A.shape
        if sp.issparse(A):
            self._dense = None
            try:
                lu = spla.splu(sp.csc_matrix(A), permc_spec="MMD_AT_PLUS_A",
                               diag_pivot_thresh=0.0,
                               options=dict(SymmetricMode=True))
            except RuntimeError as exc:
                raise NotPositiveDefiniteError(f"factorization failed: {exc}") from None
            if not np.array_equal(lu.perm_r, lu.perm_c):
                raise NotPositiveDefiniteError("factorization needed off-diagonal pivoting")
            pivots = lu.U.diagonal()
            if not np.all(pivots > 0):
                raise NotPositiveDefiniteError(
                    f"nonpositive pivot {pivots.min():.3e}; matrix is not positive definite")
            self._lu = lu
        else:
            try:
                self._dense = sla.cho_factor(np.asarray(A, dtype=float), lower=True)
            except sla.LinAlgError as exc:
                raise NotPositiveDefiniteError(str(exc)) from None

    def solve(self, b) -> np.ndarray:
        if self._dense is not None:
            return sla.cho_solve(self._dense, b)
        return self._lu.solve(np.asarray(b, dtype=float))


def direct_spd_solve(system: LinearSystem, factor: SPDFactor | None = None) -> np.ndarray:
    """Solve an SPD system by symmetric factorization.

    One step of iterative refinement is applied if the relative residual
    exceeds 1e-12.

    Raises
    ------
    NotPositiveDefiniteError
        If the matrix has a nonpositive pivot.
    """
    factor = factor or SPDFactor(system.matrix)
    x = factor.solve(system.rhs)
    if system.scaled_residual(x) > DIRECT_RTOL:
        x = x + factor.solve(system.residual(x))
    return x


class SymmetricGaussSeidel:
    """Forward then backward Gauss-Seidel sweep, triangular factors cached."""

    def __init__(self, A):
        A = sp.csr_matrix(A)
        diag = A.diagonal()
        if np.any(diag == 0):
            raise InvalidSystemError("Gauss-Seidel needs a nonzero diagonal")
        self.A = A
        lower = sp.csc_matrix(sp.tril(A))
        upper = sp.csc_matrix(sp.triu(A))
        opts = dict(permc_spec="NATURAL", diag_pivot_thresh=0.0,
                    options=dict(SymmetricMode=True))
        self._lower = spla.splu(lower, **opts)
        self._upper = spla.splu(upper, **opts)

    def sweep(self, x, b, sweeps: int = 1) -> np.ndarray:
        x = np.array(x, dtype=float, copy=True)
        for _ in range(sweeps):
            x += self._lower.solve(b - self.A @ x)
            x += self._upper.solve(b - self.A @ x)
        return x


def smoother_sweep(system: LinearSystem, x, sweeps: int) -> np.ndarray:
    """Apply ``sweeps`` symmetric Gauss-Seidel sweeps to ``x``."""
    if sweeps < 1:
        raise ValueError("sweeps must be >= 1")
    return SymmetricGaussSeidel(system.matrix).sweep(x, system.rhs, sweeps)


def galerkin_product(A, pair: TransferPair):
    """``R A P``, symmetrized; sparse in, sparse out."""
    if A.shape != (pair.fine_dim, pair.fine_dim):
        raise ValueError(f"matrix shape {A.shape} does not match pair fine "
                         f"dimension {pair.fine_dim}")
    if sp.issparse(A):
        G = pair.R @ (A @ pair.P)
        return sp.csr_matrix(0.5 * (G + G.T))
    G = pair.R @ (pair.P.T @ np.asarray(A).T).T
    G = np.asarray(G)
    return 0.5 * (G + G.T)


def two_grid_solve(system: LinearSystem, pair: TransferPair, tol: float = 0.1,
                   x0=None, pre_sweeps: int = 2, post_sweeps: int = 2,
                   max_cycles: int = 100) -> tuple[np.ndarray, int]:
    """Two-grid cycles until ``||A x - b|| / ||b|| <= tol``.

    Each cycle: ``pre_sweeps`` symmetric Gauss-Seidel sweeps, direct solve of
    the Galerkin system ``(R A P) e = R r``, prolongation of the correction,
    ``post_sweeps`` sweeps.

    Returns
    -------
    x : ndarray
    cycles : int
        Number of cycles performed (0 if ``x0`` already meets ``tol``).

    Raises
    ------
    RankDeficiencyError
        If ``R A P`` is not SPD.
    NonConvergenceError
        After ``max_cycles`` cycles; carries the last scaled residual.
    """
    A, b = system.matrix, system.rhs
    if pair.fine_dim != system.dimension:
        raise ValueError(f"pair fine dimension {pair.fine_dim} != system "
                         f"dimension {system.dimension}")
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float, copy=True)
    nb = np.linalg.norm(b)
    if nb == 0:
        nb = 1.0
    res = np.linalg.norm(b - A @ x) / nb
    if res <= tol:
        return x, 0
    try:
        coarse = SPDFactor(galerkin_product(A, pair))
    except NotPositiveDefiniteError as exc:
        raise RankDeficiencyError(f"coarse Galerkin matrix is not SPD: {exc}") from None
    smoother = SymmetricGaussSeidel(A)
    for cycle in range(1, max_cycles + 1):
        x = smoother.sweep(x, b, pre_sweeps)
        r = b - A @ x
        x += pair.P @ coarse.solve(pair.R @ r)
        x = smoother.sweep(x, b, post_sweeps)
        res = np.linalg.norm(b - A @ x) / nb
        if res <= tol:
            return x, cycle
    raise NonConvergenceError(
        f"two-grid method did not reach {tol} in {max_cycles} cycles "
        f"(scaled residual {res:.3e})", residual=res, iterations=max_cycles, x=x)
