import math
import warnings

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from parabolica.coeffs.examples import ex1, heat_spec, spec_from_expressions
from parabolica.mesh import (
    Field, GridTooLarge, PecletWarning, assemble, build_grid, discrete_gradient, inner, lp_norm, sup_norm,
)

Q_TXT = "1 + x1^2/4, x1*x2/8; x1*x2/8, 1 + x2^2/4"
B_TXT = [["x2, 0.5; 0.5, 1", "1, x1; x1, 0"], ["x2", "x1"]]
C_TXT = ["-1 - r2, 0.2; 0.2, -2", "-r2"]


def _spec(m):
    if m == 1:
        return spec_from_expressions(2, 1, Q_TXT, B_TXT[1], C_TXT[1])
    return spec_from_expressions(2, 2, Q_TXT, B_TXT[0], C_TXT[0])


def _exact_action(m):
    """Sympy evaluation of sum D_i(q_ij D_j f) + sum B_i D_i f + C f for a smooth f."""
    x1, x2 = sp.symbols("x1 x2", real=True)
    xs = (x1, x2)
    r2 = x1 ** 2 + x2 ** 2
    Q = sp.Matrix([[1 + x1 ** 2 / 4, x1 * x2 / 8], [x1 * x2 / 8, 1 + x2 ** 2 / 4]])
    if m == 1:
        B = [sp.Matrix([[x2]]), sp.Matrix([[x1]])]
        C = sp.Matrix([[-r2]])
        f = sp.Matrix([sp.exp(-r2) * (1 + x1)])
    else:
        B = [sp.Matrix([[x2, 0.5], [0.5, 1]]), sp.Matrix([[1, x1], [x1, 0]])]
        C = sp.Matrix([[-1 - r2, 0.2], [0.2, -2]])
        f = sp.Matrix([sp.exp(-r2) * (1 + x1), sp.sin(x2) * sp.exp(-r2)])
    Af = sp.zeros(m, 1)
    for i in range(2):
        for j in range(2):
            Af += sp.diff(Q[i, j] * sp.diff(f, xs[j]), xs[i])
        Af += B[i] * sp.diff(f, xs[i])
    Af += C * f
    return sp.lambdify(xs, f, "numpy"), sp.lambdify(xs, Af, "numpy")


@pytest.mark.parametrize("m", [1, 2])
def test_centered_scheme_is_second_order_consistent(m):
    spec = _spec(m)
    f, Af = _exact_action(m)
    errs = []
    hs = [1 / 8, 1 / 16, 1 / 32]
    for h in hs:
        grid = build_grid(2, 2.0, h)
        op = assemble(spec, 0.0, grid, "dirichlet", "vector_A", warn=False)
        F = np.stack([np.asarray(f(x, y), float).reshape(-1) for x, y in grid.nodes])
        exact = np.stack([np.asarray(Af(x, y), float).reshape(-1) for x, y in grid.nodes])
        got = op.apply(F)
        mask = np.linalg.norm(grid.nodes, axis=1) <= 1.0
        errs.append(np.abs(got[mask] - exact[mask]).max())
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.9), (errs, orders)


def test_grid_layout():
    g = build_grid(2, 2.0, 0.5)
    # brute-force enumeration of (1/2) Z^2 in the closed disc of radius 2
    pts = {(i, j) for i in range(-4, 5) for j in range(-4, 5) if i * i + j * j <= 16}
    assert g.N == len(pts) == 49
    inner_pts = [p for p in pts if all((p[0] + a, p[1] + b) in pts for a, b in ((1, 0), (-1, 0), (0, 1), (0, -1)))]
    assert g.interior.sum() == len(inner_pts)
    n0 = g.find((0, 0))
    assert np.allclose(g.nodes[n0], 0.0)
    assert g.neighbors[n0, 0, 1] == g.find((1, 0))
    edge = g.find((4, 0))
    assert g.neighbors[edge, 0, 1] == -1 and g.boundary[edge]
    assert g.cell_volume == 0.25
    assert g.ball_mask(0.5).sum() == 5


def test_grid_validation():
    with pytest.raises(ValueError):
        build_grid(1, 0.1, 0.05)
    with pytest.raises(GridTooLarge) as exc:
        build_grid(2, 10.0, 0.01, max_nodes=1000)
    assert exc.value.suggested_h > 0.01


def test_one_dimensional_stencil_and_neumann_rows():
    g = build_grid(1, 1.0, 0.25)
    op = assemble(heat_spec(), 0.0, g, "dirichlet", "vector_A")
    A = op.dense() * 0.25 ** 2
    assert np.allclose(np.diag(A), -2.0) and np.allclose(np.diag(A, 1), 1.0)
    assert op.size == g.N - 2
    opn = assemble(heat_spec(), 0.0, g, "neumann", "vector_A")
    assert opn.size == g.N
    assert np.allclose(opn.dense().sum(axis=1), 0.0)


def test_adjoint_flavor_is_exact_transpose(grid2):
    spec = ex1()
    A = assemble(spec, 0.0, grid2, "dirichlet", "vector_A", warn=False).matrix
    As = assemble(spec, 0.0, grid2, "dirichlet", "vector_A_star", warn=False).matrix
    assert abs(A.T - As).max() == 0.0
    with pytest.raises(ValueError):
        assemble(spec, 0.0, grid2, "neumann", "vector_A_star")


def test_scalar_flavor_uses_componentwise_drift(grid2):
    op = assemble(ex1(), 0.0, grid2, "dirichlet", "scalar_A", warn=False)
    assert op.m == 1 and op.size == int((~grid2.boundary).sum())


def test_peclet_warning_and_upwind():
    spec = spec_from_expressions(1, 1, "1", ["40"], "0", b=["40"])
    g = build_grid(1, 1.0, 0.125)
    with pytest.warns(PecletWarning):
        op = assemble(spec, 0.0, g, "dirichlet", "vector_A")
    assert op.peclet == pytest.approx(2.5)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        up = assemble(spec, 0.0, g, "dirichlet", "vector_A", upwind=True)
    A = up.dense()
    off = A - np.diag(np.diag(A))
    assert np.all(off >= 0)


def test_field_round_trips(tmp_path, rng):
    g = build_grid(2, 1.0, 0.25)
    fld = Field(g, rng.normal(size=(g.N, 3)))
    fld.to_csv(tmp_path / "f.csv")
    back = Field.from_csv(tmp_path / "f.csv")
    assert np.array_equal(back.values, fld.values)
    fld.save_binary(tmp_path / "f.bin")
    back = Field.load_binary(tmp_path / "f.bin")
    assert np.array_equal(back.values, fld.values) and back.grid.h == g.h
    with pytest.raises(ValueError):
        Field.from_bytes(b"garbage" * 10)


def test_vanishing_on_boundary():
    g = build_grid(1, 1.0, 0.25)
    f = Field.from_function(g, lambda X: 1 - X[:, 0] ** 2)
    assert f.vanishes_on_boundary()
    assert not Field.from_function(g, lambda X: np.ones(len(X))).vanishes_on_boundary()


GRID = build_grid(2, 1.0, 0.25)
fields = arrays(np.float64, (GRID.N, 2), elements=st.floats(-1e3, 1e3, allow_nan=False))


@given(fields, fields, st.sampled_from([1.0, 1.5, 2.0, 4.0, math.inf]))
def test_lp_norm_is_a_norm(f, g, p):
    a, b, s = lp_norm(f, GRID, p), lp_norm(g, GRID, p), lp_norm(f + g, GRID, p)
    assert s <= a + b + 1e-9 * (a + b + 1)
    assert lp_norm(-2.5 * f, GRID, p) == pytest.approx(2.5 * a, rel=1e-12, abs=1e-300)


@given(fields, fields)
def test_holder_pairing(f, g):
    assert abs(inner(f, g, GRID)) <= lp_norm(f, GRID, 2) * lp_norm(g, GRID, 2) * (1 + 1e-12) + 1e-12


def test_lp_norm_values():
    g = build_grid(1, 2.0, 0.5)
    v = np.ones((g.N, 1))
    assert lp_norm(v, g, 2) == pytest.approx(math.sqrt(9 * 0.5))
    assert sup_norm(3 * v, g) == 3.0
    with pytest.raises(ValueError):
        lp_norm(v, g, 0.5)


def test_discrete_gradient_exact_on_linear():
    g = build_grid(2, 1.0, 0.25)
    G = discrete_gradient(2 * g.nodes[:, 0] - 3 * g.nodes[:, 1], g)
    # nodes without a neighbor along an axis get a zero component there
    has = (g.neighbors >= 0).any(axis=2)
    assert np.allclose(G[has[:, 0], 0, 0], 2.0) and np.allclose(G[has[:, 1], 1, 0], -3.0)
    assert np.all(G[~has[:, 0], 0, 0] == 0.0)
