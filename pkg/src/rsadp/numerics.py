"""Small dense linear-algebra and ODE kernels used by every other module.

Vectors are 1-D ``numpy.ndarray`` of float64; matrices are 2-D row-major
arrays.  The sizes that occur in this package are tiny (state dimension
up to 4, weight dimension up to 10, buffers up to ~100 records), so the
kernels favour transparency and testability over asymptotic speed:

- ``rk4_step``: classical fixed-step 4th-order Runge-Kutta.
- ``pinv_full_column_rank``: Moore-Penrose inverse via the normal
  equations, restricted to full-column-rank inputs.
- ``sym_eig_min``: smallest eigenvalue of a symmetric matrix by cyclic
  Jacobi rotations.
- ``matrix_rank``: numerical rank by row reduction with partial pivoting.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ContractError, IntegrationDivergedError, SingularInputError

Vec = np.ndarray
Mat = np.ndarray

# Relative gap below which a column-rank check fails in pinv_full_column_rank.
_PINV_RTOL = 1e-8


def rk4_step(deriv: Callable[[float, Vec], Vec], x: Vec, t: float, h: float) -> Vec:
    """Advance ``x`` at time ``t`` by one step ``h`` of classical RK4.

    ``deriv(t, x)`` must return the state derivative.  Raises
    :class:`IntegrationDivergedError` (carrying ``t`` and the stage index)
    if any stage evaluates to a non-finite value.
    """
    if h <= 0.0:
        raise ContractError(f"step size must be positive, got {h}")
    x = np.asarray(x, dtype=float)
    k1 = np.asarray(deriv(t, x), dtype=float)
    _check_stage(k1, t, 1)
    k2 = np.asarray(deriv(t + 0.5 * h, x + 0.5 * h * k1), dtype=float)
    _check_stage(k2, t, 2)
    k3 = np.asarray(deriv(t + 0.5 * h, x + 0.5 * h * k2), dtype=float)
    _check_stage(k3, t, 3)
    k4 = np.asarray(deriv(t + h, x + h * k3), dtype=float)
    _check_stage(k4, t, 4)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _check_stage(k: Vec, t: float, stage: int) -> None:
    if not np.all(np.isfinite(k)):
        raise IntegrationDivergedError(
            f"non-finite derivative in RK4 stage {stage} at t={t:.6g}", t=t, stage=stage
        )


def pinv_full_column_rank(G: Mat) -> Mat:
    """Moore-Penrose inverse (G^T G)^-1 G^T of a full-column-rank matrix.

    Raises :class:`SingularInputError` when the smallest singular value of
    ``G`` falls below ``1e-8`` times the largest one.  Zero-column inputs
    (shape ``(n, 0)``) return the empty ``(0, n)`` pseudoinverse.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    n, m = G.shape
    if m == 0:
        return np.zeros((0, n))
    gram = G.T @ G
    eigs = _jacobi_eigvals(gram)
    lam_min, lam_max = eigs[0], eigs[-1]
    # Singular values squared; rank deficiency shows up as a tiny lam_min.
    if lam_max <= 0.0 or lam_min <= (_PINV_RTOL**2) * lam_max:
        raise SingularInputError(
            f"matrix of shape {G.shape} is not full column rank "
            f"(squared singular values min={lam_min:.3e}, max={lam_max:.3e})"
        )
    return np.linalg.solve(gram, G.T)


def sym_eig_min(M: Mat) -> float:
    """Smallest eigenvalue of a symmetric matrix via cyclic Jacobi rotations.

    The input must be symmetric to within ``1e-12`` relative to its largest
    entry (floor 1); asymmetric input raises :class:`ContractError`.
    Rotations sweep until the off-diagonal Frobenius norm of the scaled
    working matrix drops below ``1e-12``.
    """
    return float(_jacobi_eigvals(M)[0])


def _jacobi_eigvals(M: Mat, tol: float = 1e-12, max_sweeps: int = 64) -> Vec:
    """All eigenvalues of a symmetric matrix, ascending, by cyclic Jacobi."""
    A = np.array(M, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ContractError(f"expected a square matrix, got shape {A.shape}")
    n = A.shape[0]
    if n == 0:
        return np.zeros(0)
    scale = np.max(np.abs(A))
    asym = np.max(np.abs(A - A.T)) if n > 1 else 0.0
    if asym > 1e-12 * max(1.0, scale):
        raise ContractError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    if scale == 0.0:
        return np.zeros(n)
    A = 0.5 * (A + A.T) / scale
    off_mask = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(A[off_mask] ** 2))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if theta == 0.0:
                    t = 1.0
                elif abs(theta) > 1e10:  # avoid overflow in theta**2
                    t = 0.5 / theta
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot = np.array([[c, s], [-s, c]])
                A[[p, q], :] = rot.T @ A[[p, q], :]
                A[:, [p, q]] = A[:, [p, q]] @ rot
                A[p, q] = A[q, p] = 0.0  # annihilated by construction
    else:
        raise ContractError("Jacobi sweep limit exceeded without convergence")
    return np.sort(np.diag(A)) * scale


def matrix_rank(M: Mat, tol: float | None = None) -> int:
    """Numerical rank by Gaussian elimination with partial pivoting.

    Pivots with absolute value below ``tol`` are treated as zero.  The
    default tolerance is ``1e-8`` times the largest absolute entry.
    """
    A = np.array(np.atleast_2d(M), dtype=float)
    n, m = A.shape
    if tol is None:
        tol = 1e-8 * np.max(np.abs(A)) if A.size else 0.0
    elif tol <= 0.0:
        raise ContractError(f"rank tolerance must be positive, got {tol}")
    if A.size == 0 or np.max(np.abs(A)) == 0.0:
        return 0
    rank = 0
    for col in range(m):
        if rank == n:
            break
        pivot = rank + int(np.argmax(np.abs(A[rank:, col])))
        if abs(A[pivot, col]) < tol:
            continue
        A[[rank, pivot], :] = A[[pivot, rank], :]
        below = A[rank + 1 :, col] / A[rank, col]
        A[rank + 1 :, :] -= np.outer(below, A[rank, :])
        rank += 1
    return rank
