"""Extreme eigenvalues of small symmetric matrices.

Batched cyclic Jacobi rotations for sizes up to ``JACOBI_MAX``; larger
matrices fall back to LAPACK through :func:`numpy.linalg.eigh`.
"""

import numpy as np

TAU_SYM = 1e-12
TAU_EIG = 1e-10
JACOBI_MAX = 8


class AsymmetryError(ValueError):
    """Raised when a matrix expected to be symmetric is not."""

    def __init__(self, asymmetry, tol):
        self.asymmetry = float(asymmetry)
        self.tol = float(tol)
        super().__init__(f"matrix not symmetric: max |M - M^T| = {self.asymmetry:.3e} > {self.tol:.1e}")


def max_asymmetry(M):
    M = np.asarray(M, dtype=float)
    if M.shape[-1] == 0:
        return 0.0
    return float(np.max(np.abs(M - np.swapaxes(M, -1, -2)), initial=0.0))


def check_symmetric(M, tol=TAU_SYM):
    """Raise :class:`AsymmetryError` if ``M`` (or any matrix of a batch) is not symmetric.

    The tolerance is relative to ``max(1, max|M|)`` so large-magnitude
    coefficients are not rejected for round-off.
    """
    M = np.asarray(M, dtype=float)
    asym = max_asymmetry(M)
    scale = max(1.0, float(np.max(np.abs(M), initial=0.0)))
    if asym > tol * scale:
        raise AsymmetryError(asym, tol * scale)
    return asym


def jacobi_eigh(M, vectors=False, tol=1e-15, max_sweeps=50):
    """Eigen-decomposition of a batch of symmetric matrices by cyclic Jacobi.

    Parameters
    ----------
    M : array_like, shape (..., k, k)
        Symmetric matrices. Only the symmetric part is used.
    vectors : bool
        Also return eigenvectors (columns).
    tol : float
        Sweeps stop once the off-diagonal Frobenius norm drops below
        ``tol`` times the matrix norm for every batch member.

    Returns
    -------
    w : ndarray, shape (..., k)
        Eigenvalues in ascending order.
    V : ndarray, shape (..., k, k)
        Only if ``vectors``; ``M @ V[..., :, j] = w[..., j] * V[..., :, j]``.
    """
    A = np.array(M, dtype=float)
    A = 0.5 * (A + np.swapaxes(A, -1, -2))
    k = A.shape[-1]
    batch = A.shape[:-2]
    A = A.reshape((-1, k, k))
    V = np.broadcast_to(np.eye(k), A.shape).copy() if vectors else None
    norm = np.sqrt(np.sum(A * A, axis=(1, 2)))
    norm = np.where(norm == 0.0, 1.0, norm)
    iu = np.triu_indices(k, 1)

    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * np.sum(A[:, iu[0], iu[1]] ** 2, axis=1))
        if np.all(off <= tol * norm):
            break
        for p in range(k - 1):
            for q in range(p + 1, k):
                apq = A[:, p, q]
                active = np.abs(apq) > 1e-300
                if not np.any(active):
                    continue
                app = A[:, p, p]
                aqq = A[:, q, q]
                theta = np.where(active, (aqq - app) / (2.0 * np.where(active, apq, 1.0)), 0.0)
                t = np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0))
                t = np.where(theta == 0.0, 1.0, t)
                t = np.where(active, t, 0.0)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # rotate columns p, q then rows p, q
                Ap = A[:, :, p].copy()
                Aq = A[:, :, q].copy()
                A[:, :, p] = c[:, None] * Ap - s[:, None] * Aq
                A[:, :, q] = s[:, None] * Ap + c[:, None] * Aq
                Ap = A[:, p, :].copy()
                Aq = A[:, q, :].copy()
                A[:, p, :] = c[:, None] * Ap - s[:, None] * Aq
                A[:, q, :] = s[:, None] * Ap + c[:, None] * Aq
                A[:, p, q] = 0.0
                A[:, q, p] = 0.0
                if vectors:
                    Vp = V[:, :, p].copy()
                    Vq = V[:, :, q].copy()
                    V[:, :, p] = c[:, None] * Vp - s[:, None] * Vq
                    V[:, :, q] = s[:, None] * Vp + c[:, None] * Vq

    w = np.diagonal(A, axis1=1, axis2=2).copy()
    order = np.argsort(w, axis=1)
    w = np.take_along_axis(w, order, axis=1).reshape(batch + (k,))
    if not vectors:
        return w
    V = np.take_along_axis(V, order[:, None, :], axis=2).reshape(batch + (k, k))
    return w, V


def eigh(M, vectors=False):
    """Symmetric eigensolver: Jacobi for small sizes, LAPACK otherwise."""
    M = np.asarray(M, dtype=float)
    if M.shape[-1] <= JACOBI_MAX:
        return jacobi_eigh(M, vectors=vectors)
    S = 0.5 * (M + np.swapaxes(M, -1, -2))
    return np.linalg.eigh(S) if vectors else np.linalg.eigvalsh(S)


def eig_extremes(M):
    """Batched ``(lambda_min, lambda_max)`` without symmetry validation."""
    M = np.asarray(M, dtype=float)
    if M.shape[-1] == 1:
        v = M[..., 0, 0]
        return v.copy(), v.copy()
    w = eigh(M)
    return w[..., 0], w[..., -1]


def lambda_extremes(M, tol_sym=TAU_SYM):
    """Minimum and maximum eigenvalue of a symmetric matrix.

    Raises
    ------
    AsymmetryError
        If ``M`` is not symmetric within ``tol_sym``.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim < 2 or M.shape[-1] != M.shape[-2]:
        raise ValueError(f"expected square matrix, got shape {M.shape}")
    check_symmetric(M, tol_sym)
    lo, hi = eig_extremes(M)
    if lo.ndim == 0:
        return float(lo), float(hi)
    return lo, hi
