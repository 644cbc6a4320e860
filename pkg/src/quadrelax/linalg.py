"""Dense linear algebra kernels shared by the relaxation and separation code.

Thin wrappers around LAPACK (via numpy/scipy) that pin down the exact
conventions the rest of the package relies on: orthonormal nullspace bases,
smallest (generalized/projected) eigenvalues, and an incrementally updated
inverse of a positive definite matrix under rank-one diagonal modifications.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

__all__ = [
    "NullspaceBasis",
    "InverseState",
    "nullspace_basis",
    "min_eigenvalue",
    "min_generalized_eigenvalue",
    "projected_min_eigenvalue",
    "factor_inverse",
    "sherman_morrison_update",
    "psd_certificate",
]

# Orthogonality / annihilation tolerance for nullspace bases.
_NULL_TOL = 1e-10

# Relative residual of M @ V - I above which a tracked inverse is refactored.
_DRIFT_TOL = 1e-8


def _as_symmetric_matrix(M, name="M"):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    asym = np.abs(M - M.T).max(initial=0.0)
    if asym > 1e-8 * max(1.0, np.abs(M).max(initial=0.0)):
        raise ValueError(f"{name} must be symmetric (asymmetry {asym:.3e})")
    return 0.5 * (M + M.T)


@dataclass(frozen=True)
class NullspaceBasis:
    """Orthonormal basis Z of the nullspace of A.

    Satisfies ||A @ Z||_max <= 1e-10 * max(1, ||A||_max) and
    ||Z.T @ Z - I||_max <= 1e-10.  For a system with no equality rows Z is
    the identity.  ``dim`` is the nullspace dimension (columns of Z).
    """

    Z: np.ndarray

    @property
    def dim(self) -> int:
        return self.Z.shape[1]


def nullspace_basis(A, n: int | None = None) -> NullspaceBasis:
    """Orthonormal nullspace basis of A (the identity when A has no rows).

    Parameters
    ----------
    A : (m, n) array_like or None
        Equality coefficient matrix.  None or zero rows means free space.
    n : int, optional
        Number of variables; required when A is None or empty.

    Returns
    -------
    NullspaceBasis
        Basis with verified annihilation and orthonormality.
    """
    if A is None or np.size(A) == 0:
        if n is None:
            raise ValueError("n is required when A is empty")
        return NullspaceBasis(Z=np.eye(n))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if n is not None and A.shape[1] != n:
        raise ValueError(f"A has {A.shape[1]} columns, expected {n}")
    Z = scipy.linalg.null_space(A)
    if Z.size:
        resid = np.abs(A @ Z).max()
        if resid > _NULL_TOL * max(1.0, np.abs(A).max()):
            raise ValueError(f"nullspace residual {resid:.3e} too large")
        ortho = np.abs(Z.T @ Z - np.eye(Z.shape[1])).max()
        if ortho > _NULL_TOL:
            raise ValueError(f"nullspace basis not orthonormal ({ortho:.3e})")
    return NullspaceBasis(Z=Z)


def min_eigenvalue(M) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    M = _as_symmetric_matrix(M)
    if M.shape[0] == 0:
        raise ValueError("empty matrix has no eigenvalues")
    return float(scipy.linalg.eigh(M, eigvals_only=True,
                                   subset_by_index=[0, 0])[0])


def min_generalized_eigenvalue(M, B) -> float:
    """Smallest lambda with M v = lambda B v, for symmetric M and SPD B.

    Computed by Cholesky reduction of the pencil (B = R^T R, then the
    ordinary smallest eigenvalue of R^-T M R^-1).
    """
    M = _as_symmetric_matrix(M)
    B = _as_symmetric_matrix(B, name="B")
    if M.shape != B.shape:
        raise ValueError(f"shape mismatch: {M.shape} vs {B.shape}")
    try:
        R = scipy.linalg.cholesky(B)  # upper: B = R^T R
    except scipy.linalg.LinAlgError as e:
        raise ValueError("B must be positive definite") from e
    W = scipy.linalg.solve_triangular(R.T, M, lower=True)
    C = scipy.linalg.solve_triangular(R.T, W.T, lower=True)
    return min_eigenvalue(0.5 * (C + C.T))


def projected_min_eigenvalue(M, basis: NullspaceBasis) -> float:
    """Smallest eigenvalue of Z^T M Z for a nullspace basis Z.

    +inf when the nullspace is trivial (every direction is annihilated).
    """
    Z = basis.Z if isinstance(basis, NullspaceBasis) else np.asarray(basis, float)
    if Z.ndim != 2:
        raise ValueError("basis must be a matrix")
    if Z.shape[1] == 0:
        return float("inf")
    M = _as_symmetric_matrix(M)
    C = Z.T @ M @ Z
    return min_eigenvalue(0.5 * (C + C.T))


@dataclass
class InverseState:
    """Tracked inverse V of a positive definite matrix M.

    ``sherman_morrison_update`` applies rank-one diagonal modifications
    M <- M + delta e_i e_i^T cheaply to V while keeping M itself exact.
    Every n updates the product M @ V is checked against the identity and V
    is refactored from M if the accumulated drift exceeds tolerance.
    """

    M: np.ndarray
    V: np.ndarray
    update_count: int = 0
    refactor_count: int = field(default=0, compare=False)

    @property
    def n(self) -> int:
        return self.M.shape[0]

    def diagonal(self) -> np.ndarray:
        return np.diag(self.V).copy()


def factor_inverse(M) -> InverseState:
    """Factor a symmetric positive definite matrix and return its inverse state.

    Raises ValueError if M is not positive definite.
    """
    M = _as_symmetric_matrix(M)
    try:
        c, low = scipy.linalg.cho_factor(M)
    except scipy.linalg.LinAlgError as e:
        raise ValueError("matrix is not positive definite") from e
    V = scipy.linalg.cho_solve((c, low), np.eye(M.shape[0]))
    V = 0.5 * (V + V.T)
    return InverseState(M=M.copy(), V=V)


def sherman_morrison_update(state: InverseState, i: int, delta: float) -> None:
    """Apply M <- M + delta e_i e_i^T to a tracked inverse, in place.

    Requires 1 + delta * V[i, i] > 0, which keeps the updated matrix
    positive definite; violating it raises ValueError and leaves the state
    untouched.  Every n-th update triggers a drift check of M @ V against
    the identity, refactoring V from the exactly tracked M if needed.
    """
    n = state.n
    if not 0 <= i < n:
        raise ValueError(f"index {i} out of range for n={n}")
    denom = 1.0 + delta * state.V[i, i]
    if denom <= 0.0:
        raise ValueError(
            f"update would lose positive definiteness (1 + delta*V_ii = {denom:.3e})")
    vi = state.V[:, i].copy()
    state.V -= (delta / denom) * np.outer(vi, vi)
    state.M[i, i] += delta
    state.update_count += 1
    if state.update_count % n == 0:
        scale = max(1.0, np.abs(state.M).max())
        drift = np.abs(state.M @ state.V - np.eye(n)).max()
        if drift > _DRIFT_TOL * scale:
            fresh = factor_inverse(state.M)
            state.V = fresh.V
            state.refactor_count += 1


def psd_certificate(M, tol: float = 1e-8) -> bool:
    """Whether M is positive semidefinite within a relative tolerance.

    True iff lambda_min(M) >= -tol * max(1, ||M||_max).
    """
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    M = _as_symmetric_matrix(M)
    if M.shape[0] == 0:
        return True
    lam = min_eigenvalue(M)
    return lam >= -tol * max(1.0, np.abs(M).max(initial=0.0))
