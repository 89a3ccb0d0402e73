"""Pointwise functionals built from the coefficients.

Vectorized kernels work on batches of points and directions; the public
single-point wrappers validate their inputs.
"""

import math

import numpy as np

from .eig import eig_extremes, eigh
from .growth import Growth, bounded_above
from .spec import TAU_UNIT, MissingDataError


class SingularDiffusionError(ValueError):
    def __init__(self, lambda_min):
        self.lambda_min = float(lambda_min)
        super().__init__(f"diffusion matrix not invertible: lambda_min(Q) = {self.lambda_min:.3e}")


class SigmaError(ValueError):
    pass


def safe_inverse(Q):
    """Batched inverse of positive definite matrices, rejecting singular ones."""
    lo, _ = eig_extremes(Q)
    bad = np.atleast_1d(lo) <= 0
    if np.any(bad):
        raise SingularDiffusionError(np.min(lo))
    return np.linalg.inv(Q)


def bracket_term(Qinv, B, E):
    """``sum_ij (Q^-1)_ij [<B_i e,e><B_j e,e> - <B_i e,B_j e>]`` for every point and direction.

    Parameters
    ----------
    Qinv : (N, d, d)
    B : (N, d, m, m)
    E : (M, m) unit directions

    Returns
    -------
    ndarray, shape (N, M)
    """
    BE = np.einsum("nikl,jl->nijk", B, E)
    be = np.einsum("nijk,jk->nij", BE, E)
    t1 = np.einsum("nab,naj,nbj->nj", Qinv, be, be)
    t2 = np.einsum("nab,najk,nbjk->nj", Qinv, BE, BE)
    return t1 - t2


def quad(M, E):
    """``<M e, e>`` for (N, m, m) matrices and (M, m) directions -> (N, M)."""
    return np.einsum("nkl,jk,jl->nj", M, E, E)


def K_batch(spec, t, X, E):
    Q = spec.eval_Q(t, X)
    B = spec.eval_B(t, X)
    C = spec.eval_C(t, X)
    return bracket_term(safe_inverse(Q), B, E) - 4.0 * quad(C, E)


def tilde_K_batch(spec, t, X, E, kappa=None):
    """Returns ``(values, fd_used)``; ``kappa`` defaults to ``spec.kappa``."""
    divB, fd = spec.divB(t, X)
    kap = _kappa_values(spec, t, X, kappa)
    return K_batch(spec, t, X, E) + 4.0 * quad(divB, E) + 4.0 * kap[:, None], fd


def _kappa_values(spec, t, X, kappa):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if kappa is None:
        if spec.kappa is None:
            raise MissingDataError("kappa is required for the dual conditions")
        kappa = spec.kappa
    if callable(kappa):
        return np.broadcast_to(np.asarray(kappa(t, X), dtype=float), (X.shape[0],))
    return np.full(X.shape[0], float(kappa))


def _unit(eta, m):
    eta = np.asarray(eta, dtype=float).reshape(-1)
    if eta.shape != (m,):
        raise ValueError(f"eta must have {m} components")
    if abs(np.linalg.norm(eta) - 1.0) > TAU_UNIT:
        raise ValueError(f"eta must be a unit vector, |eta| = {np.linalg.norm(eta)!r}")
    return eta


def K_eta(spec, t, x, eta):
    """The drift/potential balance ``K_eta`` at a single point."""
    eta = _unit(eta, spec.m)
    return float(K_batch(spec, t, np.atleast_2d(x), eta[None, :])[0, 0])


def tilde_K_eta(spec, kappa, t, x, eta):
    """``K_eta + 4 <(sum_k D_k B_k) eta, eta> + 4 kappa`` at a single point."""
    eta = _unit(eta, spec.m)
    val, _ = tilde_K_batch(spec, t, np.atleast_2d(x), eta[None, :], kappa)
    return float(val[0, 0])


def H_expression(spec, t, X, beta=None):
    """``Lambda_C + beta d m^2 xi^2 lambda_Q^(2 sigma - 1)`` at each point."""
    if not spec.has_decomposition:
        raise MissingDataError("H needs the decomposition B_i = b_i I + Btilde_i; supply b and Btilde")
    beta = spec.beta if beta is None else beta
    lamQ, _ = eig_extremes(spec.eval_Q(t, X))
    _, LamC = eig_extremes(spec.eval_C(t, X))
    xi = spec.xi_at(t)
    return LamC + beta * spec.d * spec.m ** 2 * xi ** 2 * lamQ ** (2.0 * spec.sigma - 1.0)


def H_growth_terms(spec):
    g = spec.growth
    lam = g.get("lambda_Q")
    terms = [g.get("Lambda_C")]
    xi_pos = float(spec.xi(0.0 if math.isinf(spec.time_interval[0]) else spec.time_interval[0])) > 0
    if xi_pos:
        terms.append(None if lam is None else Growth(1, (2.0 * spec.sigma - 1.0) * lam.exponent))
    return terms


def H_beta_sup(spec, J, plan, beta=None):
    """Sampled supremum of the H expression over ``J x box``.

    Returns a dict with ``value``, ``argmax`` ``(t, x)`` and the
    ``asymptotic`` verdict (``bounded`` when declared growth forces the
    expression bounded above).
    """
    from ..sampling import sampled_extremum

    res = sampled_extremum(lambda t, X: H_expression(spec, t, X, beta), spec, J, plan, mode="max")
    res["asymptotic"] = bounded_above(H_growth_terms(spec))
    return res


def M_gamma(spec, t, X):
    xi = spec.xi_at(t)
    k = spec.eval_scalar("k_bound", t, X, default=0.0)
    g = spec.gamma
    sd = math.sqrt(spec.d)
    return g * (sd * spec.m * xi + spec.d * k) ** 2 + 0.5 * sd * spec.m * xi + 1.0 / (4.0 * g)


def _sym_max(M):
    return eig_extremes(0.5 * (M + np.swapaxes(M, -1, -2)))[1]


def gradient_functionals(spec, t, X):
    """Integrands of the two gradient finiteness conditions.

    Returns
    -------
    dict
        ``fin1``, ``fin2``, ``M_gamma`` arrays of shape (N,) and
        ``fd_used``.

    Raises
    ------
    SigmaError
        If ``spec.sigma != 1``.
    """
    if spec.sigma != 1.0:
        raise SigmaError("gradient hypotheses stated for sigma=1 only")
    if not spec.has_decomposition:
        raise MissingDataError("gradient functionals need the decomposition b, Btilde")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    d, m = spec.d, spec.m
    xi = spec.xi_at(t)
    lamQ, _ = eig_extremes(spec.eval_Q(t, X))
    _, LamC = eig_extremes(spec.eval_C(t, X))
    dC, fd1 = spec.derivative("dC", t, X)
    d2Q, fd2 = spec.derivative("d2Q", t, X)
    dBt, fd3 = spec.derivative("dBtilde", t, X)
    db, fd4 = spec.derivative("db", t, X)
    nC = np.sqrt(np.sum(dC ** 2, axis=(1, 2, 3)))
    # sum_{i,j,l} |D_i D_l q_ij|^2
    dq2 = np.sqrt(np.einsum("nilij->n", d2Q ** 2))
    nBt = np.sqrt(np.sum(dBt ** 2, axis=(1, 2, 3, 4)))
    # D_x b has entries (D_j b_i); its symmetric part decides Lambda
    Db = np.swapaxes(db, 1, 2)
    LamDb = _sym_max(Db)
    Mg = M_gamma(spec, t, X)
    fin1 = math.sqrt(d) * m * xi * lamQ + nC + 2.0 * LamC
    fin2 = math.sqrt(d) * dq2 + nBt + LamDb + LamC + Mg * lamQ + 0.5 * nC
    return {"fin1": fin1, "fin2": fin2, "M_gamma": Mg, "fd_used": bool(fd1 or fd2 or fd3 or fd4)}


def L_expression(spec, t, X):
    """``Lambda_{2C - sum_i D_i B_i}`` at each point, and the fallback flag."""
    C = spec.eval_C(t, X)
    divB, fd = spec.divB(t, X)
    M = 2.0 * C - divB
    return eig_extremes(0.5 * (M + np.swapaxes(M, -1, -2)))[1], fd


def drift_matrix(spec, t, X, grad_phi):
    """``sum_i D_i phi B_i`` of shape (N, m, m); its Rayleigh quotient is ``<b_eta, D phi>``."""
    B = spec.eval_B(t, X)
    return np.einsum("ni,niab->nab", grad_phi, B)


def extreme_directions(M):
    """Min/max eigenvalues of (N, m, m) symmetric matrices with their eigenvectors."""
    w, V = eigh(M, vectors=True)
    return w[:, 0], V[:, :, 0], w[:, -1], V[:, :, -1]
