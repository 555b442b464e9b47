"""Dense matrix utilities: symmetric vectorizations, duplication matrices,
discrete Lyapunov solves, stability and definiteness tests.

The ``vecs`` ordering (rows of the upper triangle, left to right) is shared
with :mod:`riskpo.data_driven`; changing it breaks the data operators.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as sla

from .errors import IllConditionedError, UnstableMatrixError

__all__ = [
    "DuplicationMatrix",
    "symmetrize",
    "vecs",
    "unvecs",
    "vecv",
    "vecv_rows",
    "sym_dim",
    "duplication",
    "solve_dlyap",
    "spectral_radius",
    "is_stable",
    "is_psd",
    "is_pd",
    "STABILITY_MARGIN",
]

# rho < 1 - STABILITY_MARGIN counts as stable.
STABILITY_MARGIN = 1e-9
_ASYMMETRY_TOL = 1e-8
_KRONECKER_MAX_N = 20


def sym_dim(n):
    """Length of ``vecs`` of an ``n x n`` symmetric matrix."""
    return n * (n + 1) // 2


def symmetrize(X, name="X"):
    """Return ``(X + X^T)/2``.

    Raises ``ValueError`` if ``X`` is not square or if its asymmetry exceeds
    1e-8 relative to its Frobenius norm.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {X.shape}")
    scale = max(1.0, np.linalg.norm(X))
    if np.linalg.norm(X - X.T) > _ASYMMETRY_TOL * scale:
        raise ValueError(f"{name} is not symmetric")
    return 0.5 * (X + X.T)


def vecs(X):
    """Stack the upper triangle of symmetric ``X`` row by row.

    ``[x11, x12, ..., x1n, x22, x23, ..., xnn]``.
    """
    X = symmetrize(X)
    return X[np.triu_indices(X.shape[0])].copy()


def _n_from_len(length):
    n = int(round((np.sqrt(8 * length + 1) - 1) / 2))
    if sym_dim(n) != length:
        raise ValueError(f"length {length} is not a triangular number")
    return n


def unvecs(v, n=None):
    """Inverse of :func:`vecs`."""
    v = np.asarray(v, dtype=float).ravel()
    if n is None:
        n = _n_from_len(v.size)
    elif v.size != sym_dim(n):
        raise ValueError(f"expected {sym_dim(n)} entries for n={n}, got {v.size}")
    X = np.zeros((n, n))
    iu = np.triu_indices(n)
    X[iu] = v
    X[(iu[1], iu[0])] = v
    return X


def vecv(a):
    """Quadratic monomials of ``a`` with doubled cross terms.

    Satisfies ``vecv(a) @ vecs(X) == a @ X @ a`` for symmetric ``X``.
    """
    a = np.asarray(a, dtype=float).ravel()
    n = a.size
    outer = np.outer(a, a)
    outer *= 2.0
    outer[np.diag_indices(n)] *= 0.5
    return outer[np.triu_indices(n)]


def vecv_rows(Z):
    """Row-wise :func:`vecv` of a ``(T, n)`` array, returning ``(T, n(n+1)/2)``."""
    Z = np.asarray(Z, dtype=float)
    n = Z.shape[1]
    i, j = np.triu_indices(n)
    scale = np.where(i == j, 1.0, 2.0)
    return Z[:, i] * Z[:, j] * scale


@dataclass(frozen=True)
class DuplicationMatrix:
    """``T`` with ``vec(X) = T @ vecs(X)`` for symmetric ``X``, plus its pseudo-inverse.

    ``vec`` stacks columns. Both arrays are read-only since instances are cached.
    """

    dim: int
    matrix: np.ndarray
    pinv: np.ndarray


@lru_cache(maxsize=64)
def duplication(n):
    if n < 1:
        raise ValueError("n must be >= 1")
    T = np.zeros((n * n, sym_dim(n)))
    for k, (i, j) in enumerate(zip(*np.triu_indices(n))):
        T[j * n + i, k] = 1.0
        T[i * n + j, k] = 1.0
    # T has orthogonal columns, so T^+ = (T^T T)^{-1} T^T exactly.
    Tp = np.diag(1.0 / np.sum(T, axis=0)) @ T.T
    T.setflags(write=False)
    Tp.setflags(write=False)
    return DuplicationMatrix(dim=n, matrix=T, pinv=Tp)


def spectral_radius(A):
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    try:
        eig = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise IllConditionedError(f"eigenvalue computation failed: {exc}") from exc
    return float(np.max(np.abs(eig)))


def is_stable(A):
    return spectral_radius(A) < 1.0 - STABILITY_MARGIN


def solve_dlyap(A, Q):
    """Solve ``A^T P A - P + Q = 0`` for stable ``A``.

    Uses the vectorized Kronecker system for ``n <= 20``. Larger problems go
    through scipy's Schur-based discrete Lyapunov solver.

    Raises
    ------
    UnstableMatrixError
        If ``rho(A) >= 1``.
    IllConditionedError
        If the Kronecker system is numerically singular (some eigenvalue
        product of ``A`` is close to 1).
    """
    A = np.asarray(A, dtype=float)
    Q = symmetrize(Q, "Q")
    n = A.shape[0]
    if A.shape != (n, n) or Q.shape != (n, n):
        raise ValueError(f"shape mismatch: A {A.shape}, Q {Q.shape}")
    try:
        eig = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise IllConditionedError(f"eigenvalue computation failed: {exc}") from exc
    rho = float(np.max(np.abs(eig)))
    if rho >= 1.0:
        raise UnstableMatrixError(f"spectral radius {rho:.6g} >= 1")
    # the Kronecker operator has eigenvalues lambda_i lambda_j - 1
    if np.min(np.abs(1.0 - np.outer(eig, eig))) < 1e-12:
        raise IllConditionedError("Lyapunov operator is numerically singular")
    if n > _KRONECKER_MAX_N:
        P = sla.solve_discrete_lyapunov(A.T, Q)
        return 0.5 * (P + P.T)
    M = np.kron(A.T, A.T) - np.eye(n * n)
    p = np.linalg.solve(M, -Q.reshape(-1, order="F"))
    P = p.reshape(n, n, order="F")
    return 0.5 * (P + P.T)


def is_psd(X, tol=0.0):
    """True iff ``lambda_min(sym(X)) >= -tol``."""
    X = np.asarray(X, dtype=float)
    return bool(np.linalg.eigvalsh(0.5 * (X + X.T))[0] >= -tol)


def is_pd(X, rel=1e-9):
    """Strict definiteness with the package-wide margin ``lambda_min > rel * ||X||``."""
    X = np.asarray(X, dtype=float)
    X = 0.5 * (X + X.T)
    lam = np.linalg.eigvalsh(X)
    return bool(lam[0] > rel * max(np.max(np.abs(lam)), 1e-300))
