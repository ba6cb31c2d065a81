"""Dense symmetric eigendecomposition.

The cyclic Jacobi solver is the reference path; LAPACK (``numpy.linalg.eigh``)
is used for larger matrices where O(n) Python-level rotations per pair are too
slow. Both return the same normalized form.
"""
from dataclasses import dataclass

import numpy as np

JACOBI_MAX_N = 64


class EigenConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """``M = U.T @ diag(lam) @ U``; eigenvectors are the *rows* of ``U``."""

    U: np.ndarray
    lam: np.ndarray

    def apply(self, multipliers):
        """Matrix function ``U.T @ diag(multipliers) @ U``."""
        return (self.U.T * multipliers) @ self.U


def _normalize(vecs, lam):
    """Sort ascending and flip signs so each eigenvector's largest-magnitude entry is positive."""
    order = np.argsort(lam, kind="stable")
    lam = lam[order]
    U = vecs[:, order].T.copy()
    idx = np.argmax(np.abs(U), axis=1)
    signs = np.sign(U[np.arange(len(U)), idx])
    signs[signs == 0] = 1.0
    U *= signs[:, None]
    return SpectralDecomposition(U, lam)


def jacobi_eig(M, tol=1e-12, max_sweeps=100):
    """Cyclic Jacobi: sweep pairs (p, q) in row order until the off-diagonal
    Frobenius norm is at most ``tol`` (relative to ``‖M‖_F``, absolute floor 1e-300)."""
    A = np.array(M, dtype=np.float64, copy=True)
    n = A.shape[0]
    V = np.eye(n)
    scale = max(np.linalg.norm(A), 1e-300)

    def off(a):
        return np.linalg.norm(a - np.diag(np.diag(a)))

    for _ in range(max_sweeps):
        if off(A) <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if theta == 0.0:
                    t = 1.0
                elif abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = A[:, p].copy()
                aq = A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                rp = A[p, :].copy()
                rq = A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                vp = V[:, p].copy()
                V[:, p] = c * vp - s * V[:, q]
                V[:, q] = s * vp + c * V[:, q]
    else:
        if off(A) > tol * scale:
            raise EigenConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps")
    return _normalize(V, np.diag(A).copy())


def symmetric_eig(M, method="auto"):
    """Eigendecomposition of a symmetric matrix.

    ``method`` is ``"jacobi"``, ``"lapack"`` or ``"auto"`` (Jacobi up to
    ``JACOBI_MAX_N`` rows).
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if not np.allclose(M, M.T, atol=1e-10, rtol=0):
        raise ValueError("matrix is not symmetric to 1e-10")
    M = 0.5 * (M + M.T)
    if method == "auto":
        method = "jacobi" if M.shape[0] <= JACOBI_MAX_N else "lapack"
    if method == "jacobi":
        return jacobi_eig(M)
    if method == "lapack":
        lam, vecs = np.linalg.eigh(M)
        return _normalize(vecs, lam)
    raise ValueError(f"unknown eig method {method!r}")
