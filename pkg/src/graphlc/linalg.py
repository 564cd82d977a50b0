"""Dense linear algebra: SPD factorisation, symmetric eigenproblems, complex inversion.

All routines are thin, validated wrappers around LAPACK (via numpy/scipy):
Cholesky (potrf), Householder tridiagonalisation + QL/QR (syevd family) and LU
with partial pivoting (getrf). The wrappers own the input checks, the one-shot
jitter policy and the error types.
"""
from dataclasses import dataclass
import warnings

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, NoConvergence, NotPositiveDefinite, Singular

SYMMETRY_TOL = 1e-10
PIVOT_TOL = 1e-14


def _check_square(m, name="matrix"):
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def _check_symmetric(m):
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if m.size and np.max(np.abs(m - m.T)) > SYMMETRY_TOL * scale:
        raise ValueError("matrix is not symmetric")


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor ``L`` with ``L @ L.T == m + jitter * I``."""

    L: np.ndarray
    jitter: float = 0.0

    @property
    def n(self):
        return self.L.shape[0]


def chol_factor(m):
    """Cholesky-factorise a symmetric positive definite matrix.

    If the first attempt fails, a single jitter of ``1e-12 * trace / n`` is
    added to the diagonal and the factorisation retried once.
    """
    m = _check_square(np.asarray(m, dtype=float))
    _check_symmetric(m)
    n = m.shape[0]
    if n == 0:
        return CholeskyFactor(np.zeros((0, 0)))
    try:
        return CholeskyFactor(np.linalg.cholesky(m))
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-12 * abs(np.trace(m)) / n
    try:
        L = np.linalg.cholesky(m + jitter * np.eye(n))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("matrix is not positive definite after jitter") from exc
    return CholeskyFactor(L, jitter)


def solve_spd(f, b):
    """Solve ``m x = b`` given the Cholesky factor of ``m``; ``b`` may be 1-D or 2-D."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != f.n:
        raise DimensionMismatch(f"factor is {f.n}x{f.n} but rhs has {b.shape[0]} rows")
    if f.n == 0:
        return b.copy()
    return scipy.linalg.cho_solve((f.L, True), b)


def half_solve(f, b):
    """Return ``L^{-1} b`` (forward substitution with the Cholesky factor)."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != f.n:
        raise DimensionMismatch(f"factor is {f.n}x{f.n} but rhs has {b.shape[0]} rows")
    if f.n == 0:
        return b.copy()
    return scipy.linalg.solve_triangular(f.L, b, lower=True)


def sym_eigen(m, vectors=False):
    """Eigen-decompose a real symmetric matrix; eigenvalues come back ascending.

    Returns ``w`` or ``(w, U)`` with the eigenvectors as the columns of ``U``.
    """
    m = _check_square(np.asarray(m, dtype=float))
    _check_symmetric(m)
    try:
        if vectors:
            return np.linalg.eigh(m)
        return np.linalg.eigvalsh(m)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence("symmetric eigensolver did not converge") from exc


def complex_inverse(m):
    """Invert a square complex matrix by LU with partial pivoting.

    Raises ``Singular`` when a pivot falls below ``1e-14 * max|m_ij|``.
    """
    m = _check_square(np.asarray(m, dtype=complex))
    n = m.shape[0]
    if n == 0:
        return m.copy()
    with warnings.catch_warnings():
        # an exactly zero pivot is reported through Singular below
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(m, check_finite=False)
    scale = np.max(np.abs(m))
    if scale == 0 or np.min(np.abs(np.diag(lu))) <= PIVOT_TOL * scale:
        raise Singular("matrix is numerically singular")
    return scipy.linalg.lu_solve((lu, piv), np.eye(n, dtype=complex), check_finite=False)


def complex_inverse_batch(stack):
    """Invert a stack of square complex matrices of shape ``(B, n, n)``.

    Used by the population-dynamics inner loop, where the per-matrix pivot
    audit of :func:`complex_inverse` would dominate the cost; a non-finite
    result is reported as ``Singular`` instead.
    """
    stack = np.asarray(stack, dtype=complex)
    try:
        out = np.linalg.inv(stack)
    except np.linalg.LinAlgError as exc:
        raise Singular("singular matrix in batch") from exc
    if not np.all(np.isfinite(out)):
        raise Singular("non-finite entries in batched inverse")
    return out
