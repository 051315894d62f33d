"""Numerically stable QR (modified Gram-Schmidt) and complex SVD (one-sided
Jacobi) for the dense, modestly sized (N <= 128) matrices of the signal model.

The compressed-spacing subcarrier matrix becomes savagely ill conditioned as
alpha shrinks and N grows (cond ~ 1e13 at alpha = 0.8, N = 64), so both
routines are written for accuracy rather than speed: Gram-Schmidt runs a
second orthogonalization pass per column, and the Jacobi rotations use a
relative off-diagonal threshold so the left singular vectors stay orthonormal
even when sigma_min is at round-off level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateMatrixError, NumericalError, ParameterError

# Rank-deficiency pivot threshold, relative to ||A||_F.
_PIVOT_RTOL = 1e-13
# Jacobi rotation thresholds: relative to the column-norm product, with the
# absolute cap 1e-14*||A||_F^2 also enforced at convergence.
_JACOBI_RTOL = 1e-13
_JACOBI_ATOL_SCALE = 1e-14
_JACOBI_MAX_SWEEPS = 60


@dataclass(frozen=True)
class QrFactors:
    """A = Q R with Q^H Q = I and R upper triangular, real positive diagonal."""

    q: np.ndarray
    r: np.ndarray


@dataclass(frozen=True)
class SvdFactors:
    """A = U diag(sigma) V^H with sigma sorted in descending order."""

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray


def _require_square(a: np.ndarray, who: str) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ParameterError(f"{who} expects a square matrix, got shape {a.shape}")
    return a.astype(np.complex128, copy=True)


def mgs_qr(a: np.ndarray) -> QrFactors:
    """Modified Gram-Schmidt QR of a square, numerically full-rank matrix.

    Each column is orthogonalized twice against the established basis
    ("twice is enough"): a single pass loses orthogonality as
    O(eps * cond(A)), which is fatal for the ill-conditioned subcarrier
    matrices this package feeds in.

    Raises DegenerateMatrixError naming the first column whose pivot falls
    below 1e-13 * ||A||_F.
    """
    work = _require_square(a, "mgs_qr")
    n = work.shape[0]
    pivot_floor = _PIVOT_RTOL * np.linalg.norm(work)
    q = np.zeros_like(work)
    r = np.zeros((n, n), dtype=np.complex128)
    for j in range(n):
        v = work[:, j].copy()
        for _ in range(2):
            for i in range(j):
                c = np.vdot(q[:, i], v)
                r[i, j] += c
                v -= c * q[:, i]
        norm = np.linalg.norm(v)
        if not norm > pivot_floor:
            raise DegenerateMatrixError(
                f"column {j} is numerically dependent (pivot {norm:.3e} <= {pivot_floor:.3e})",
                column=j,
            )
        r[j, j] = norm  # real positive by construction
        q[:, j] = v / norm
    return QrFactors(q=q, r=r)


def svd_complex(a: np.ndarray, max_sweeps: int = _JACOBI_MAX_SWEEPS) -> SvdFactors:
    """One-sided Jacobi SVD of a square complex matrix.

    Columns are pairwise rotated (right multiplication by 2x2 unitaries,
    accumulated into V) until all off-diagonal Gram entries |a_i^H a_j| drop
    below min(1e-13*||a_i||*||a_j||, 1e-14*||A||_F^2); then U is the column-
    normalized working matrix and sigma its column norms, sorted descending
    with U and V permuted consistently.

    Raises NumericalError with the worst relative off-diagonal residual if the
    sweep cap is hit.
    """
    work = np.asfortranarray(_require_square(a, "svd_complex"))
    n = work.shape[0]
    v = np.eye(n, dtype=np.complex128, order="F")
    abs_tol = _JACOBI_ATOL_SCALE * np.linalg.norm(work) ** 2
    sweeps = 0
    while True:
        rotated = 0
        for i in range(n - 1):
            for j in range(i + 1, n):
                col_i = work[:, i]
                col_j = work[:, j]
                nii = np.vdot(col_i, col_i).real
                njj = np.vdot(col_j, col_j).real
                gij = np.vdot(col_i, col_j)
                norm_prod = np.sqrt(nii * njj)
                if norm_prod == 0.0:
                    continue
                if abs(gij) <= min(_JACOBI_RTOL * norm_prod, abs_tol):
                    continue
                rotated += 1
                # Diagonalize the 2x2 Hermitian Gram block [[nii, gij], [gij*, njj]]:
                # factor out the phase of gij, then a real Jacobi rotation.
                phase = gij / abs(gij)
                tau = (njj - nii) / (2.0 * abs(gij))
                t = np.sign(tau) / (abs(tau) + np.hypot(1.0, tau)) if tau != 0.0 else 1.0
                c = 1.0 / np.hypot(1.0, t)
                s = c * t
                sp = s * phase.conjugate()
                new_i = c * col_i - sp * col_j
                new_j = s * col_i + c * phase.conjugate() * col_j
                work[:, i] = new_i
                work[:, j] = new_j
                vi = v[:, i].copy()
                v[:, i] = c * vi - sp * v[:, j]
                v[:, j] = s * vi + c * phase.conjugate() * v[:, j]
        sweeps += 1
        if rotated == 0:
            break
        if sweeps >= max_sweeps:
            residual = _worst_off_diagonal(work)
            raise NumericalError(
                f"Jacobi SVD did not converge in {max_sweeps} sweeps "
                f"(worst relative off-diagonal {residual:.3e})"
            )
    sigma = np.linalg.norm(work, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    u = work[:, order] / np.where(sigma > 0.0, sigma, 1.0)
    return SvdFactors(u=np.ascontiguousarray(u), sigma=sigma, v=np.ascontiguousarray(v[:, order]))


def _worst_off_diagonal(work: np.ndarray) -> float:
    gram = work.conj().T @ work
    norms = np.sqrt(np.abs(np.diagonal(gram)))
    denom = np.outer(norms, norms)
    denom[denom == 0.0] = 1.0
    off = np.abs(gram) / denom
    np.fill_diagonal(off, 0.0)
    return float(off.max())
