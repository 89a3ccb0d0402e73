import math

import numpy as np
import pytest
import sympy as sp
from scipy.linalg import hessenberg
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from parabolica.coeffs.eig import AsymmetryError, eig_extremes, eigh, jacobi_eigh, lambda_extremes
from parabolica.coeffs.examples import ex1, ex2, example_family, FamilyError, heat_spec, spec_from_expressions
from parabolica.coeffs.expr import ExpressionError, parse_scalar, scalar_field
from parabolica.coeffs.functionals import (
    H_expression, K_batch, K_eta, L_expression, gradient_functionals, tilde_K_eta,
)
from parabolica.coeffs.growth import BOUNDED, UNBOUNDED, UNKNOWN, Growth, bounded_above, leading_limit


# ---------------------------------------------------------------------------
# eigenvalue oracle: Householder tridiagonal form, Sturm counts, bisection

def _count_below(T, lam):
    """Sturm count of eigenvalues below ``lam`` for a symmetric tridiagonal ``T``."""
    a, b = np.diag(T), np.diag(T, 1)
    tiny = np.finfo(float).eps * (1.0 + np.abs(T).max())
    neg, q = 0, 1.0
    for k in range(len(a)):
        q = a[k] - lam - (b[k - 1] ** 2 / q if k else 0.0)
        if abs(q) < tiny:
            q = -tiny
        neg += q < 0
    return neg


def _bisect_eigs(M, iters=200):
    n = len(M)
    T = hessenberg(np.asarray(M, float))
    T = np.triu(np.tril(0.5 * (T + T.T), 1), -1)
    R = float(np.max(np.sum(np.abs(M), axis=1))) + 1.0
    out = []
    for k in range(n):
        lo, hi = -R, R
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            if _count_below(T, mid) <= k:
                lo = mid
            else:
                hi = mid
        out.append(0.5 * (lo + hi))
    return np.array(out)


sym_mats = st.integers(1, 5).flatmap(
    lambda n: arrays(np.float64, (n, n), elements=st.floats(-10, 10, allow_nan=False, width=64))
).map(lambda A: 0.5 * (A + A.T))


@given(sym_mats)
def test_jacobi_matches_bisection_oracle(M):
    w = jacobi_eigh(M)
    ref = _bisect_eigs(M)
    assert np.allclose(w, ref, atol=1e-9 * max(1.0, np.abs(M).max()))


@given(sym_mats)
def test_eigenvectors_diagonalize(M):
    w, V = jacobi_eigh(M, vectors=True)
    assert np.allclose(M @ V, V * w, atol=1e-9 * max(1.0, np.abs(M).max()))
    assert np.allclose(V.T @ V, np.eye(len(M)), atol=1e-10)


def test_batched_extremes_and_large_fallback(rng):
    A = rng.normal(size=(20, 3, 3))
    A = A + np.swapaxes(A, 1, 2)
    lo, hi = eig_extremes(A)
    ref = np.linalg.eigvalsh(A)
    assert np.allclose(lo, ref[:, 0]) and np.allclose(hi, ref[:, -1])
    big = rng.normal(size=(12, 12))
    big = big + big.T
    assert np.allclose(eigh(big), np.linalg.eigvalsh(big))


def test_lambda_extremes_rejects_asymmetry():
    with pytest.raises(AsymmetryError):
        lambda_extremes(np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        lambda_extremes(np.ones(3))
    lo, hi = lambda_extremes(np.array([[2.0, 1.0], [1.0, 2.0]]))
    assert lo == pytest.approx(1.0) and hi == pytest.approx(3.0)


# ---------------------------------------------------------------------------
# growth bookkeeping

def test_growth_parse_and_limits():
    assert Growth.parse("+ 2") == Growth(1, 2.0)
    assert Growth.parse("-1 4.5") == Growth(-1, 4.5)
    assert Growth.parse("0") == Growth(0, 0.0)
    with pytest.raises(ValueError):
        Growth.parse("up 2")
    assert leading_limit([Growth(1, 2), Growth(-1, 3)]) == -1
    assert leading_limit([Growth(1, 2), Growth(-1, 2)]) is None
    assert leading_limit([Growth(1, 0)]) == 0
    assert bounded_above([Growth(1, 2)]) == UNBOUNDED
    assert bounded_above([Growth(-1, 2)]) == BOUNDED
    assert bounded_above([None]) == UNKNOWN


# ---------------------------------------------------------------------------
# functionals on the example families

def _rho(x):
    return 1.0 + float(x @ x)


def test_K_closed_form_for_isotropic_ex1(rng):
    # with Bhat = Chat = I the bracket vanishes and K = 4 |x|^2 rho^b
    spec = ex1()
    for _ in range(10):
        x = rng.normal(size=2) * 2
        eta = rng.normal(size=2)
        eta /= np.linalg.norm(eta)
        assert K_eta(spec, 0.0, x, eta) == pytest.approx(4 * (x @ x) * _rho(x) ** 3, rel=1e-12)


def test_K_bracket_against_direct_sum(rng):
    Bh = [np.array([[1.0, 0.3], [0.3, 2.0]]), np.array([[2.0, 0.5], [0.5, 1.0]])]
    spec = ex1(a=1, b=1, c=3.5, Bhat=Bh)
    for _ in range(5):
        x = rng.normal(size=2)
        eta = rng.normal(size=2)
        eta /= np.linalg.norm(eta)
        Q = spec.eval_Q(0.0, x[None])[0]
        B = spec.eval_B(0.0, x[None])[0]
        C = spec.eval_C(0.0, x[None])[0]
        Qi = np.linalg.inv(Q)
        s = 0.0
        for i in range(2):
            for j in range(2):
                s += Qi[i, j] * ((B[i] @ eta @ eta) * (B[j] @ eta @ eta) - (B[i] @ eta) @ (B[j] @ eta))
        assert K_eta(spec, 0.0, x, eta) == pytest.approx(s - 4 * eta @ C @ eta, rel=1e-10, abs=1e-12)


def test_tilde_K_adds_divergence_and_kappa(rng):
    spec = ex1()
    x = np.array([0.7, -0.4])
    eta = np.array([0.6, 0.8])
    divB, _ = spec.divB(0.0, x[None])
    expected = K_eta(spec, 0.0, x, eta) + 4 * eta @ divB[0] @ eta + 4 * spec.kappa(0.0, x[None])[0]
    assert tilde_K_eta(spec, spec.kappa, 0.0, x, eta) == pytest.approx(expected)


def test_unit_vector_is_enforced(spec1):
    with pytest.raises(ValueError):
        K_eta(spec1, 0.0, [0.0, 0.0], [1.0, 1.0])


def test_H_and_L_expressions_ex1(rng):
    spec = ex1()
    X = rng.normal(size=(6, 2))
    rho = 1 + np.sum(X ** 2, axis=1)
    # Lambda_C = -|x|^2 rho^3, xi = 0.1, lambda_Q = 1
    H = H_expression(spec, 0.0, X)
    assert np.allclose(H, -(rho - 1) * rho ** 3 + 0.5 * 2 * 4 * 0.01)
    L, _ = L_expression(spec, 0.0, X)
    # sum_i D_i B_i = -(d rho + 2 |x|^2) I for a = 1
    assert np.allclose(L, -2 * (rho - 1) * rho ** 3 + (2 * rho + 2 * (rho - 1)))


def _fd(fn, x, h=1e-6):
    cols = []
    for l in range(len(x)):
        e = np.zeros_like(x)
        e[l] = h
        cols.append((fn(0.0, (x + e)[None])[0] - fn(0.0, (x - e)[None])[0]) / (2 * h))
    return np.stack(cols)


@pytest.mark.parametrize("family", ["ex1", "ex2"])
def test_analytic_derivatives_match_central_differences(family, rng):
    spec = ex1(Bhat=[np.diag([1.0, 2.0]), np.eye(2)]) if family == "ex1" else ex2()
    for _ in range(3):
        x = rng.normal(size=2)
        for name, base in (("dB", spec.B), ("dC", spec.C), ("dQ", spec.Q), ("db", spec.b),
                           ("dBtilde", spec.Btilde)):
            got = getattr(spec, name)(0.0, x[None])[0]
            assert np.allclose(got, _fd(base, x), rtol=1e-6, atol=1e-6), name
        assert np.allclose(spec.d2Q(0.0, x[None])[0], _fd(spec.dQ, x), rtol=1e-6, atol=1e-6)


def test_ex2_against_sympy():
    # independent symbolic construction of the second family
    x1, x2 = sp.symbols("x1 x2", real=True)
    delta, a, b, c = 1, sp.Rational(3, 2), sp.Rational(1, 2), 3
    rho = 1 + x1 ** 2 + x2 ** 2
    Bh = sp.Rational(1, 2) * sp.eye(2)
    Ch = 2 * sp.eye(2)
    B = [-xi * rho ** a * sp.eye(2) + rho ** b * Bh for xi in (x1, x2)]
    C = -rho ** c * Ch
    Q = rho ** delta * sp.eye(2)
    spec = ex2(delta=1, a=1.5, b=0.5, c=3)
    pt = {x1: 0.3, x2: -1.1}
    X = np.array([[0.3, -1.1]])
    for i in range(2):
        assert np.allclose(spec.eval_B(0.0, X)[0, i], np.array(B[i].subs(pt), float))
        for l, xl in enumerate((x1, x2)):
            assert np.allclose(spec.dB(0.0, X)[0, l, i], np.array(sp.diff(B[i], xl).subs(pt), float))
    assert np.allclose(spec.eval_C(0.0, X)[0], np.array(C.subs(pt), float))
    assert np.allclose(spec.eval_Q(0.0, X)[0], np.array(Q.subs(pt), float))
    # the gradient functionals: |DC| and Lambda_C enter fin1 with xi = 1/2, lambda_Q = rho
    nC = sp.sqrt(sum(sp.diff(C[k, k2], xl) ** 2 for k in range(2) for k2 in range(2) for xl in (x1, x2)))
    LamC = sp.Matrix(C).eigenvals()
    fin1 = sp.sqrt(2) * 2 * sp.Rational(1, 2) * rho + nC + 2 * max(LamC, key=lambda e: float(e.subs(pt)))
    got = gradient_functionals(spec, 0.0, X)["fin1"][0]
    assert got == pytest.approx(float(fin1.subs(pt)), rel=1e-10)


def test_family_constraints_surface_without_raising():
    spec = ex1(a=1, b=1.5)
    assert spec.constraints_violated
    assert any("b > 2a" in n for n in spec.constraint_notes)
    assert not ex1().constraints_violated
    assert not ex2().constraints_violated
    with pytest.raises(FamilyError):
        example_family("ex9")
    with pytest.raises(ValueError):
        ex1(Bhat=[[1.0, 0.0], [0.0, -1.0]])


def test_expression_specs_differentiate_exactly():
    spec = spec_from_expressions(2, 1, "1 + x1^2, 0; 0, 1 + x2^2", ["x1", "x2*x1"], "-r2", b=["x1", "x2*x1"])
    X = np.array([[0.5, -2.0]])
    assert np.allclose(spec.eval_Q(0.0, X)[0], np.diag([1.25, 5.0]))
    assert np.allclose(spec.dQ(0.0, X)[0, 0], np.diag([1.0, 0.0]))
    assert np.allclose(spec.d2Q(0.0, X)[0, 1, 1], np.diag([0.0, 2.0]))
    assert np.allclose(spec.dB(0.0, X)[0, 0, 1], [[-2.0]])
    assert spec.has_decomposition and np.allclose(spec.Btilde(0.0, X), 0.0)
    assert spec.autonomous


def test_expression_grammar_errors():
    with pytest.raises(ExpressionError):
        parse_scalar("sin(x1)", 2)
    with pytest.raises(ExpressionError):
        parse_scalar("y + 1", 2)
    with pytest.raises(ExpressionError):
        parse_scalar("", 1)
    f = scalar_field("exp(-r2) * t", 2)
    assert f.value(2.0, np.array([[1.0, 0.0]]))[0] == pytest.approx(2 * math.exp(-1))
    assert f.depends_on_time()


def test_heat_has_vanishing_functionals():
    spec = heat_spec(d=2, m=2, q=3.0)
    X = np.zeros((3, 2))
    E = np.eye(2)
    assert np.allclose(K_batch(spec, 0.0, X, E), 0.0)
