"""Prolongation/restriction operator pairs.

A :class:`TransferPair` stores the prolongation ``P`` (fine x coarse) in
sparse form together with the scaling constant ``c`` such that
``P = c * R.T``.  The restriction is derived from ``P`` and ``c`` unless an
explicit ``R`` is supplied, in which case :func:`validate_pair` reports how
far the pair is from the transpose relation.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "RankDeficiencyError",
    "TransferPair",
    "ValidationReport",
    "identity_pair",
    "build_interp_1d",
    "build_interp_2d",
    "build_interp_2d_levels",
    "compose_transfers",
    "apply_transfer",
    "operator_norms",
    "validate_pair",
    "save_pair",
    "load_pair",
]

# Dense SVD up to this dimension, Lanczos above.
DENSE_NORM_LIMIT = 2000
NORM_RTOL = 1e-8
NORM_MAXITER = 500


class RankDeficiencyError(np.linalg.LinAlgError):
    """Raised when ``R P`` (or a Galerkin product) is numerically singular."""


@dataclass(frozen=True, eq=False)
class TransferPair:
    """Prolongation ``P`` with restriction ``R = P.T / c``.

    Parameters
    ----------
    P : sparse matrix, shape (N, n)
        Prolongation from the coarse space (dimension n) to the fine space.
    c : float
        Positive constant with ``P = c * R.T``.
    R_explicit : sparse matrix, optional
        Independently supplied restriction.  Only used for pairs that are
        not built by this module; ``validate_pair`` checks it.
    """

    P: sp.csr_matrix
    c: float = 1.0
    R_explicit: sp.csr_matrix | None = None

    def __post_init__(self):
        P = sp.csr_matrix(self.P, dtype=float)
        object.__setattr__(self, "P", P)
        if not self.c > 0:
            raise ValueError(f"scaling constant c must be positive, got {self.c}")
        if self.R_explicit is not None:
            R = sp.csr_matrix(self.R_explicit, dtype=float)
            if R.shape != (P.shape[1], P.shape[0]):
                raise ValueError(
                    f"R has shape {R.shape}, expected {(P.shape[1], P.shape[0])}")
            object.__setattr__(self, "R_explicit", R)

    @property
    def fine_dim(self) -> int:
        return self.P.shape[0]

    @property
    def coarse_dim(self) -> int:
        return self.P.shape[1]

    @cached_property
    def R(self) -> sp.csr_matrix:
        if self.R_explicit is not None:
            return self.R_explicit
        return sp.csr_matrix(self.P.T / self.c)

    @cached_property
    def norms(self) -> tuple[float, float]:
        """``(omega, xi)`` as returned by :func:`operator_norms`."""
        return operator_norms(self)

    @property
    def omega(self) -> float:
        return self.norms[0]

    @property
    def xi(self) -> float:
        return self.norms[1]

    def prolong(self, v):
        return apply_transfer(self, v, "prolong")

    def restrict(self, v):
        return apply_transfer(self, v, "restrict")

    def unit_scaled(self) -> "TransferPair":
        """Equivalent pair with ``c = 1``: ``(P / sqrt(c), sqrt(c) R)``.

        The Galerkin product ``R H P`` and the coarse correction step are
        unchanged by this rescaling, so the norms of the rescaled pair are the
        ones that enter the convergence constants.
        """
        if self.R_explicit is not None:
            raise ValueError("unit scaling is only defined for implicit-R pairs")
        return TransferPair(self.P / np.sqrt(self.c), 1.0)


@dataclass(frozen=True)
class ValidationReport:
    passed: bool
    transpose_ok: bool
    full_rank: bool
    c: float
    max_transpose_deviation: float
    sigma_min: float
    messages: tuple[str, ...] = ()


def identity_pair(n: int) -> TransferPair:
    """The trivial pair ``P = R = I``."""
    return TransferPair(sp.identity(n, format="csr"), 1.0)


def _interp_1d_matrix(N: int) -> sp.csr_matrix:
    # column j (0-based) has 1/2, 1, 1/2 on fine rows 2j, 2j+1, 2j+2
    n = N // 2 - 1
    cols = np.repeat(np.arange(n), 3)
    rows = (2 * cols + np.tile([0, 1, 2], n))
    vals = np.tile([0.5, 1.0, 0.5], n)
    return sp.csr_matrix((vals, (rows, cols)), shape=(N - 1, n))


def build_interp_1d(N: int) -> TransferPair:
    """Linear interpolation on a uniform 1D grid with ``N`` intervals.

    The fine space has the ``N - 1`` interior nodes ``i/N``, the coarse space
    the ``N/2 - 1`` interior nodes of the grid with spacing ``2/N``.  Returns
    ``P = 1/2 [1 2 1]`` (banded) and ``R = P.T / 2``.
    """
    if not isinstance(N, (int, np.integer)) or N < 4 or N % 2:
        raise ValueError(f"N must be an even integer >= 4, got {N!r}")
    return TransferPair(_interp_1d_matrix(int(N)), 2.0)


def build_interp_2d(level: int) -> TransferPair:
    """Nine-point bilinear interpolation from ``level`` to ``level + 1``.

    Level ``k`` is the grid with ``2**k + 1`` nodes per axis, i.e.
    ``(2**k - 1)**2`` interior unknowns, ordered row-major (first grid axis
    slowest).  The stencil ``[1/4 1/2 1/4; 1/2 1 1/2; 1/4 1/2 1/4]`` is the
    tensor product of the 1D interpolation, and ``R = P.T / 4``.
    """
    if not isinstance(level, (int, np.integer)) or level < 1:
        raise ValueError(f"level must be an integer >= 1, got {level!r}")
    P1 = _interp_1d_matrix(2 ** (int(level) + 1))
    return TransferPair(sp.kron(P1, P1, format="csr"), 4.0)


def build_interp_2d_levels(coarse_level: int, fine_level: int) -> TransferPair:
    """Composite 2D interpolation from ``coarse_level`` up to ``fine_level``."""
    if coarse_level >= fine_level:
        raise ValueError(
            f"coarse level {coarse_level} must be below fine level {fine_level}")
    pair = build_interp_2d(coarse_level)
    for level in range(coarse_level + 1, fine_level):
        pair = compose_transfers(build_interp_2d(level), pair)
    return pair


def compose_transfers(outer: TransferPair, inner: TransferPair) -> TransferPair:
    """Chain two pairs: ``P = P_outer P_inner``, ``R = R_inner R_outer``.

    ``inner`` maps the coarsest space to the intermediate one, ``outer`` the
    intermediate space to the finest one.
    """
    if inner.fine_dim != outer.coarse_dim:
        raise ValueError(
            f"cannot compose: inner fine dimension {inner.fine_dim} != "
            f"outer coarse dimension {outer.coarse_dim}")
    P = outer.P @ inner.P
    if outer.R_explicit is None and inner.R_explicit is None:
        return TransferPair(P, outer.c * inner.c)
    return TransferPair(P, outer.c * inner.c, R_explicit=inner.R @ outer.R)


def apply_transfer(pair: TransferPair, v, direction: str) -> np.ndarray:
    """Prolong (coarse -> fine) or restrict (fine -> coarse) a vector."""
    v = np.asarray(v, dtype=float)
    if direction == "prolong":
        expected, op = pair.coarse_dim, pair.P
    elif direction == "restrict":
        expected, op = pair.fine_dim, pair.R
    else:
        raise ValueError(f"direction must be 'prolong' or 'restrict', got {direction!r}")
    if v.ndim != 1 or v.shape[0] != expected:
        raise ValueError(
            f"{direction}: expected a vector of length {expected}, got shape {v.shape}")
    return op @ v


def _dense_norms(pair: TransferPair) -> tuple[float, float]:
    P = pair.P.toarray()
    R = pair.R.toarray()
    RP = R @ P
    if np.linalg.cond(RP) > 1e12:
        raise RankDeficiencyError("R P is numerically singular; P lacks full column rank")
    omega = max(np.linalg.norm(P, 2), np.linalg.norm(R, 2))
    xi = np.linalg.norm(np.linalg.solve(RP, R), 2)
    return float(omega), float(xi)


def _largest_eig(op) -> float:
    vals = spla.eigsh(op, k=1, which="LA", tol=NORM_RTOL, maxiter=NORM_MAXITER,
                      v0=np.ones(op.shape[0]), return_eigenvectors=False)
    return float(vals[0])


def _iterative_norms(pair: TransferPair) -> tuple[float, float]:
    P, R = pair.P, pair.R
    norm_P = np.sqrt(_largest_eig(sp.csr_matrix(P.T @ P)))
    norm_R = np.sqrt(_largest_eig(sp.csr_matrix(R @ R.T)))
    RP = sp.csc_matrix(R @ P)
    try:
        lu = spla.splu(RP)
    except RuntimeError as exc:
        raise RankDeficiencyError(f"R P is singular: {exc}") from None
    RRt = R @ R.T
    n = pair.coarse_dim
    # ||(RP)^{-1} R||^2 = lambda_max((RP)^{-1} R R^T (RP)^{-T})
    gram = spla.LinearOperator(
        (n, n), matvec=lambda y: lu.solve(RRt @ lu.solve(np.ravel(y), trans="T")),
        dtype=float)
    xi = np.sqrt(_largest_eig(gram))
    if not np.isfinite(xi):
        raise RankDeficiencyError("R P is numerically singular")
    return float(max(norm_P, norm_R)), float(xi)


def operator_norms(pair: TransferPair) -> tuple[float, float]:
    """Return ``(omega, xi)`` with ``omega = max(||P||, ||R||)`` and
    ``xi = ||(R P)^{-1} R||`` (spectral norms).

    Dense singular values are used when both dimensions are at most 2000,
    Lanczos iterations (relative tolerance 1e-8) above that.

    Raises
    ------
    RankDeficiencyError
        If ``R P`` is numerically singular.
    """
    if max(pair.P.shape) <= DENSE_NORM_LIMIT:
        return _dense_norms(pair)
    return _iterative_norms(pair)


def validate_pair(pair: TransferPair) -> ValidationReport:
    """Check the transpose relation ``P = c R^T`` and full column rank of P."""
    P = pair.P
    Rt = sp.csr_matrix(pair.R.T)
    messages = []
    denom = Rt.multiply(Rt).sum()
    c_measured = float(P.multiply(Rt).sum() / denom) if denom > 0 else float("nan")
    dev = abs(P - pair.c * Rt)
    max_dev = float(dev.max()) if dev.nnz else 0.0
    transpose_ok = max_dev <= 1e-12
    if not transpose_ok:
        messages.append(f"P != c R^T: max deviation {max_dev:.3e}")

    if P.shape[1] > P.shape[0]:
        sigma_min = 0.0
    elif max(P.shape) <= DENSE_NORM_LIMIT:
        sigma_min = float(np.linalg.svd(P.toarray(), compute_uv=False).min())
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            try:
                sigma_min = float(np.sqrt(max(spla.eigsh(
                    sp.csc_matrix(P.T @ P), k=1, sigma=0, which="LM", tol=NORM_RTOL,
                    return_eigenvectors=False)[0], 0.0)))
            except RuntimeError:
                sigma_min = 0.0
    full_rank = sigma_min > 1e-10
    if not full_rank:
        messages.append(f"rank deficiency: sigma_min(P) = {sigma_min:.3e}")
    return ValidationReport(
        passed=transpose_ok and full_rank,
        transpose_ok=transpose_ok,
        full_rank=full_rank,
        c=c_measured,
        max_transpose_deviation=max_dev,
        sigma_min=sigma_min,
        messages=tuple(messages),
    )


def save_pair(pair: TransferPair, path) -> None:
    """Write ``P`` and ``c`` as a header line plus ``row col value`` triplets."""
    P = pair.P.tocoo()
    lines = [f"transfer-pair {P.shape[0]} {P.shape[1]} {float(pair.c)!r} {P.nnz}"]
    lines += [f"{i} {j} {float(v)!r}" for i, j, v in zip(P.row, P.col, P.data)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_pair(path) -> TransferPair:
    """Inverse of :func:`save_pair`."""
    text = Path(path).read_text(encoding="utf-8").split("\n")
    head = text[0].split()
    if len(head) != 5 or head[0] != "transfer-pair":
        raise ValueError(f"{path}: not a transfer-pair file")
    N, n, c, nnz = int(head[1]), int(head[2]), float(head[3]), int(head[4])
    body = [ln.split() for ln in text[1:] if ln.strip()]
    if len(body) != nnz:
        raise ValueError(f"{path}: expected {nnz} entries, found {len(body)}")
    rows = np.array([int(t[0]) for t in body], dtype=int)
    cols = np.array([int(t[1]) for t in body], dtype=int)
    vals = np.array([float(t[2]) for t in body])
    return TransferPair(sp.csr_matrix((vals, (rows, cols)), shape=(N, n)), c)
