import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize

from parabolica.coeffs.examples import ex1, ex2, heat_spec, spec_from_expressions
from parabolica.coeffs.spec import MissingDataError
from parabolica.hypocheck import (
    INCONCLUSIVE, SATISFIED, VIOLATED, check_K_nonneg, lagrange_V, lagrange_maximizer, quadratic_lyapunov,
    run_check, worst,
)
from parabolica.sampling import SamplePlan

PLAN = SamplePlan(box=6.0, spacing=0.5, n_times=1)
EX1_IDS = ["symmetry", "ellipticity", "K_nonneg", "tilde_K_nonneg_weak", "lyapunov_A_eta",
           "lyapunov_tilde_A_eta", "lyapunov_A", "decomposition", "H_beta", "L2_dissipativity", "kappa_bounded"]


def brute_force_F(Q, B, C, h, zeta, g, n, const):
    """Maximize ``const - 2 V`` over the affine constraint set with BFGS.

    The constraint ``<xi^j, zeta> = g_j / (2n)`` is eliminated by writing
    ``xi^j = g_j zeta / (2n|zeta|^2) + P y_j`` with ``P`` the projector onto
    the orthogonal complement of ``zeta``.
    """
    d, m = len(g), len(zeta)
    z2 = zeta @ zeta
    P = np.eye(m) - np.outer(zeta, zeta) / z2
    base = np.outer(g / (2 * n * z2), zeta)

    def xi_of(y):
        return base + y.reshape(d, m) @ P

    res = minimize(lambda y: lagrange_V(Q, B, C, h, xi_of(y), zeta), np.zeros(d * m), method="BFGS",
                   options={"gtol": 1e-12, "maxiter": 10_000})
    return const - 2 * res.fun, xi_of(res.x)


def random_instance(rng, d, m):
    A = rng.normal(size=(d, d))
    Q = A @ A.T + 0.5 * np.eye(d)
    B = rng.normal(size=(d, m, m))
    B = B + np.swapaxes(B, 1, 2)
    C = rng.normal(size=(m, m))
    C = 0.5 * (C + C.T)
    zeta = rng.normal(size=m)
    g = rng.normal(size=d)
    return Q, B, C, float(rng.normal()), zeta, g, int(rng.integers(1, 6))


@pytest.mark.parametrize("seed", range(10))
def test_lagrange_closed_form_matches_bfgs(seed):
    rng = np.random.default_rng(seed)
    d, m = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    Q, B, C, h, zeta, g, n = random_instance(rng, d, m)
    out = lagrange_maximizer(Q, B, C, h, zeta, g, n, A0_phi=0.3, lam=1.0, phi=2.0)
    const = (0.3 + 2 * h * 2.0 - 1.0 * 2.0) / n
    F, _ = brute_force_F(Q, B, C, h, zeta, g, n, const)
    assert out["Fmax"] == pytest.approx(F, abs=1e-6 * max(1.0, abs(F)))
    assert out["Fmax_closed"] == pytest.approx(out["Fmax"], abs=1e-9 * max(1.0, abs(F)))
    assert out["constraint_residual"] < 1e-12
    assert out["lagrangian_residual"] < 1e-10


def test_lagrange_rejects_degenerate_input():
    with pytest.raises(ValueError):
        lagrange_maximizer(np.eye(2), np.zeros((2, 2, 2)), np.eye(2), 0.0, np.zeros(2), np.ones(2), 1)
    with pytest.raises(ValueError):
        lagrange_maximizer(-np.eye(2), np.zeros((2, 2, 2)), np.eye(2), 0.0, np.ones(2), np.ones(2), 1)


def test_shipped_ex1_all_satisfied():
    spec = ex1()
    lyap = quadratic_lyapunov(5.0)
    reps = [run_check(spec, hid, plan=PLAN, lyap=lyap) for hid in EX1_IDS]
    assert [r.verdict for r in reps] == [SATISFIED] * len(EX1_IDS), [(r.hypothesis_id, r.verdict) for r in reps]


def test_ex2_gradient_hypotheses_satisfied():
    rep = run_check(ex2(), "gradient", plan=PLAN)
    assert rep.verdict == SATISFIED
    assert math.isfinite(rep.details["fin1_sup"]) and math.isfinite(rep.details["fin2_sup"])


def test_b_le_2a_violates_K_with_reproducible_witness():
    Bh = [np.array([[1.0, 0.0], [0.0, 2.0]]), np.array([[2.0, 0.5], [0.5, 1.0]])]
    spec = ex1(a=1, b=1, c=3.5, Bhat=Bh)
    r1 = run_check(spec, "K_nonneg", plan=PLAN)
    r2 = run_check(spec, "K_nonneg", plan=PLAN)
    assert r1.verdict == VIOLATED and r1.margin < 0
    assert r1.to_dict()["witness"] == r2.to_dict()["witness"]
    # the witness really is a negative value of K
    from parabolica.coeffs.functionals import K_eta

    w = r1.witness
    assert K_eta(spec, w["t"], w["x"], w["eta"]) == pytest.approx(r1.margin)


def test_delta_below_b_violates_decomposition():
    rep = run_check(ex2(delta=0.5, b=1.0), "decomposition", plan=PLAN)
    assert rep.verdict == VIOLATED
    assert rep.witness is not None


def test_small_Chat_violates_gradient():
    rep = run_check(ex2(Chat=0.5), "gradient", plan=PLAN)
    assert rep.verdict == VIOLATED


def test_asymmetric_diffusion_and_degenerate_ellipticity():
    spec = spec_from_expressions(1, 1, "x1^2", ["0"], "0")
    assert run_check(spec, "ellipticity", plan=PLAN).verdict == VIOLATED
    spec = spec_from_expressions(2, 1, "1, x1; 0, 1", ["0", "0"], "0")
    assert run_check(spec, "symmetry", plan=PLAN).verdict == VIOLATED


def test_missing_lyapunov_and_unknown_id():
    with pytest.raises(MissingDataError):
        run_check(ex1(), "lyapunov_A", plan=PLAN)
    with pytest.raises(ValueError):
        run_check(ex1(), "no_such_check", plan=PLAN)


def test_heat_K_is_zero_and_weak_mode_reports_shift():
    rep = check_K_nonneg(heat_spec(c=-1.0), plan=PLAN)
    assert rep.verdict == SATISFIED and rep.margin == pytest.approx(4.0)
    rep = check_K_nonneg(heat_spec(c=2.0), plan=PLAN, weak=True)
    assert rep.verdict != VIOLATED and rep.details["c_J"] == pytest.approx(8.0)


def test_worst_verdict_ordering():
    assert worst([SATISFIED, INCONCLUSIVE]) == INCONCLUSIVE
    assert worst([SATISFIED, VIOLATED, INCONCLUSIVE]) == VIOLATED


def test_report_json_shape():
    d = run_check(ex1(), "K_nonneg", plan=PLAN).to_dict()
    assert set(d) >= {"hypothesis_id", "verdict", "margin", "witness", "samples", "asymptotic"}
    assert set(d["witness"]) == {"t", "x", "eta"}


@given(st.floats(3.0, 6.0), st.floats(0.0, 2 * math.pi), st.floats(0.0, 2 * math.pi))
def test_fmax_nonpositive_on_ex1(r, ang, phase):
    # with phi = 1 + |x|^2, lambda = 5 and h = 0 the maximum of F is never positive
    spec = ex1()
    x = r * np.array([math.cos(ang), math.sin(ang)]) / 2
    zeta = np.array([math.cos(phase), math.sin(phase)])
    X = x[None]
    out = lagrange_maximizer(spec.eval_Q(0.0, X)[0], spec.eval_B(0.0, X)[0], spec.eval_C(0.0, X)[0], 0.0,
                             zeta, 2 * x, 1, A0_phi=2.0 * spec.d, lam=5.0, phi=1 + x @ x)
    assert out["Fmax"] <= 1e-12


@pytest.mark.parametrize("box", [2.0, 4.0])
def test_enlarging_box_keeps_violations(box):
    Bh = [np.array([[1.0, 0.0], [0.0, 2.0]]), np.array([[2.0, 0.5], [0.5, 1.0]])]
    spec = ex1(a=1, b=1, c=3.5, Bhat=Bh)
    small = run_check(spec, "K_nonneg", plan=SamplePlan(box=box, spacing=0.5, n_times=1))
    big = run_check(spec, "K_nonneg", plan=SamplePlan(box=2 * box, spacing=0.5, n_times=1))
    if small.verdict == VIOLATED:
        assert big.verdict == VIOLATED and big.margin <= small.margin


def test_antipodal_closure_gives_same_verdict():
    from parabolica.sampling import sphere_sample

    Bh = [np.array([[1.0, 0.0], [0.0, 2.0]]), np.array([[2.0, 0.5], [0.5, 1.0]])]
    spec = ex1(a=1, b=1, c=3.5, Bhat=Bh)
    sph = sphere_sample(2)
    a = check_K_nonneg(spec, plan=PLAN, sphere=sph)
    b = check_K_nonneg(spec, plan=PLAN, sphere=sph.antipodal_closure())
    assert a.verdict == b.verdict
    assert a.margin == pytest.approx(b.margin, rel=1e-12)
