"""Exit-criteria suite: one test per criterion, each printing a single PASS/FAIL line.

Run on its own with ``pytest -m acceptance -v``.
"""

import math
import os
import time

import numpy as np
import pytest
import scipy.linalg as sl
from scipy.optimize import minimize

from parabolica.cli import load_config
from parabolica.cli.emit import ReportBundle
from parabolica.cli.main import run_hypotheses
from parabolica.coeffs.examples import ex1, ex2, heat_spec, spec_from_expressions
from parabolica.evolve import EvolutionConfig, evolve, pairing_gap
from parabolica.hypocheck import SATISFIED, VIOLATED, lagrange_V, lagrange_maximizer
from parabolica.mesh import assemble, build_grid, sup_norm
from parabolica.sampling import SamplePlan
from parabolica.verify import (
    Harness, check_adjoint_l1, check_energy, check_grad1, check_grad2, check_hyper, check_lp_bound,
    check_pointwise, check_uniform, domain_convergence,
)

from conftest import CONFIG_DIR, MUTATED_DIR, bump

pytestmark = pytest.mark.acceptance

PLAN = SamplePlan(box=8.0, spacing=0.25, n_times=3)


@pytest.fixture
def verdict(capsys):
    t0 = time.perf_counter()

    def report(n, ok, detail, budget):
        elapsed = time.perf_counter() - t0
        ok = bool(ok) and elapsed < budget
        with capsys.disabled():
            print(f"\ncriterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}  [{elapsed:.1f}s / {budget:g}s]")
        assert ok, detail

    return report


def vec_bump(X, width=1.5):
    b = bump(X, width)
    return np.stack([b, 0.5 * b], axis=1)


# ---------------------------------------------------------------------------

FROZEN = spec_from_expressions(1, 2, "0.5", ["0.3, 0.1; 0.1, -0.2"], "-1, 0.2; 0.2, -0.5")


def test_1_propagator_oracle(verdict):
    g = build_grid(1, 1.0, 1 / 16)
    op = assemble(FROZEN, 0.0, g, "dirichlet", "vector_A")
    x = g.nodes[:, 0]
    f = np.stack([np.cos(np.pi * x / 2) ** 2 * (1 - x ** 2), np.sin(np.pi * x) * (1 - x ** 2)], axis=1)
    T = 0.25
    ref = op.extend(sl.expm(op.dense() * T) @ op.restrict(f))
    orders = {}
    for theta in (1.0, 0.5):
        errs = [np.abs(evolve(FROZEN, g, "dirichlet", "vector_A", f, 0.0, T, EvolutionConfig(theta=theta, dt=dt),
                              "final").values[-1] - ref).max() for dt in (1e-2, 5e-3, 2.5e-3)]
        orders[theta] = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    ok = np.all(orders[1.0] >= 0.9) and np.all(orders[0.5] >= 1.9)
    verdict(1, ok, f"orders theta=1 {np.round(orders[1.0], 3).tolist()}, "
                   f"theta=1/2 {np.round(orders[0.5], 3).tolist()} on {op.size} unknowns", 5)


def test_2_discrete_maximum_principle(verdict):
    spec = heat_spec()
    g = build_grid(1, 4.0, 1 / 16)
    r = 0.25
    tr = evolve(spec, g, "dirichlet", "vector_A", bump(g.nodes, 2.0), 0.0, r, EvolutionConfig(dt=r / 200))
    low = min(v.min() for v in tr.values)
    sups = np.array([sup_norm(v, g) for v in tr.values])
    rep = check_uniform(spec, lambda X: bump(X, 2.0), 0.0, r, g, EvolutionConfig(dt=r / 200), "prop23",
                        Harness(spec, plan=PLAN))
    ok = low >= -1e-12 and np.all(np.diff(sups) <= 0) and rep.passed and rep.metadata.get("gamma", 1.0) == 1.0
    verdict(2, ok, f"min {low:.2e}, max sup increment {np.diff(sups).max():.2e}, gamma=1 bound passed={rep.passed}",
            1)


def _pointwise_ex1(h, dt):
    spec = ex1()
    g = build_grid(2, 4.0, h)
    H = Harness(spec, plan=PLAN)
    cfg = EvolutionConfig(dt=dt, upwind=True)
    return g, [check_pointwise(spec, vec_bump, p, 0.0, 0.1, g, cfg, H) for p in (1.5, 2.0, 4.0)]


def test_3_pointwise_ex1(verdict):
    g, coarse = _pointwise_ex1(1 / 32, 0.01)
    _, fine = _pointwise_ex1(1 / 64, 0.005)
    ok = all(r.worst_margin >= -r.tol_est for r in coarse) and [r.passed for r in coarse] == [r.passed for r in fine]
    ok = ok and all(r.passed for r in coarse)
    # boundary nodes carry a zero margin, so the interior minimum is the informative one
    inner = [r.nodal["margin"][g.interior].min() for r in coarse]
    verdict(3, ok, "worst margins " + ", ".join(f"p={p:g}: {r.worst_margin:.2e} (interior {m:.2e})"
                                                for p, r, m in zip((1.5, 2, 4), coarse, inner))
            + f" on {g.N} nodes; verdicts stable under halving", 180)


def test_4_l2_dissipation(verdict):
    spec = ex1()
    g = build_grid(2, 4.0, 1 / 32)
    rep = check_energy(spec, vec_bump, 0.0, 0.1, g, EvolutionConfig(dt=0.01), Harness(spec, plan=PLAN), slack=1e-6)
    verdict(4, rep.passed, f"L_J={rep.metadata['L_J']:.4g}, max rate/energy "
                           f"{rep.metadata['max_rate_over_energy']:.4g} over {rep.metadata['steps']} steps", 30)


def test_5_lp_bounds(verdict):
    spec = ex1()
    g = build_grid(2, 4.0, 1 / 32)
    H = Harness(spec, plan=PLAN)
    cfg = EvolutionConfig(dt=0.01, upwind=True)
    runs = [("thm33", 2.0), ("thm33", 4.0), ("thm33_dual", 1.5)]
    reps = [check_lp_bound(spec, vec_bump, p, 0.0, 0.1, g, cfg, mode, H) for mode, p in runs]
    ok = all(r.passed and r.worst_margin >= -r.tol_est for r in reps)
    verdict(5, ok, "; ".join(f"{m} p={p:g}: {r.lhs:.4g} <= {r.rhs:.4g}" for (m, p), r in zip(runs, reps))
            + f" (kappa0_eff={reps[-1].metadata['kappa0_eff']:.4g})", 180)


def test_6_duality(verdict):
    spec = ex1()
    g = build_grid(2, 3.0, 0.125)
    rng = np.random.default_rng(20240611)
    cfg = EvolutionConfig(dt=0.01)
    worst = 0.0
    for _ in range(5):
        f, h = rng.normal(size=(2, g.N, 2))
        f[g.boundary] = 0.0
        h[g.boundary] = 0.0
        gap, scale = pairing_gap(spec, g, f, h, 0.0, 0.1, cfg)
        worst = max(worst, gap / scale)
    l1 = []
    for _ in range(3):
        w = np.abs(rng.normal(size=(g.N, 2)))
        l1.append(check_adjoint_l1(spec, lambda X, w=w: w, 0.0, 0.1, g, cfg))
    ok = worst <= 1e-7 and all(r.passed for r in l1)
    verdict(6, ok, f"max relative pairing gap {worst:.2e}; adjoint L1 ratios "
                   + ", ".join(f"{r.lhs / (r.rhs / (1 + 1e-8)):.6f}" for r in l1), 30)


def test_7_hypercontractivity(verdict):
    spec = heat_spec()
    H = Harness(spec, plan=PLAN)
    rels = []
    for h in (1 / 8, 1 / 16, 1 / 32):
        rep = check_hyper(spec, None, 1.0, math.inf, 0.0, 0.25, build_grid(1, 4.0, h), EvolutionConfig(dt=0.25 / 200), H)
        rels.append(abs(rep.metadata["relative_to_gaussian"]))
    converging = rels[-1] < 0.05 and all(b <= a for a, b in zip(rels, rels[1:]))
    factors = []
    g = build_grid(1, 4.0, 1 / 16)
    for p, q in ((1.0, math.inf), (1.0, 4.0), (2.0, math.inf), (4.0, math.inf)):
        rep = check_hyper(spec, None, p, q, 0.0, 0.25, g, EvolutionConfig(dt=0.25 / 200), H)
        factors.append(rep.lhs / rep.rhs if rep.passed else math.inf)
    ok = converging and all(x <= 1 + 1e-9 for x in factors)
    verdict(7, ok, f"|N_1inf / Gaussian - 1| = {[f'{x:.2e}' for x in rels]}; measured/composite "
                   f"{[round(x, 4) for x in factors]}", 120)


def test_8_gradient_estimate(verdict):
    spec = heat_spec()
    g = build_grid(1, 4.0, 1 / 16)
    heat = check_grad1(spec, lambda X: bump(X, 2.0), 2.0, 0.0, 0.1, g, EvolutionConfig(dt=0.01),
                       Harness(spec, plan=PLAN, bc="neumann"))
    s2 = ex2(c=3.0)
    H2 = Harness(s2, plan=PLAN, bc="neumann")
    rep2 = check_grad1(s2, lambda X: vec_bump(X, 2.0), 2.0, 0.0, 0.1, build_grid(2, 4.0, 0.125),
                       EvolutionConfig(dt=0.01), H2)
    ok = heat.passed and heat.worst_margin >= -1e-8 and rep2.passed
    verdict(8, ok, f"heat margin {heat.worst_margin:.2e}; ex2 passed={rep2.passed} with "
                   f"C_pJ={H2.ledger['C_pJ']:.4g} (C_needed={rep2.metadata.get('C_needed', float('nan')):.3g})", 180)


def test_9_smoothing_rate(verdict):
    spec = heat_spec(c=-0.02, xi=0.1, gamma=0.25)
    g = build_grid(1, 8.0, 1 / 16)
    sweep = list(np.geomspace(0.01, 1.0, 7))
    rep = check_grad2(spec, lambda X: bump(X, 3.0), 2.0, 0.0, 1.0, g, EvolutionConfig(dt=0.01),
                      Harness(spec, plan=PLAN, bc="neumann"), sweep=sweep)
    sc = rep.metadata["scaled_sup"]
    ok = rep.passed and rep.metadata["loglog_slope"] >= -0.05 and max(sc) < math.inf
    verdict(9, ok, f"log-log slope {rep.metadata['loglog_slope']:.4f}, scaled sup in "
                   f"[{min(sc):.4g}, {max(sc):.4g}], h_p={rep.metadata['h_p']:.4g}", 120)


def brute_force_F(Q, B, C, h, zeta, g, n, const):
    d, m = len(g), len(zeta)
    z2 = zeta @ zeta
    P = np.eye(m) - np.outer(zeta, zeta) / z2
    base = np.outer(g / (2 * n * z2), zeta)
    res = minimize(lambda y: lagrange_V(Q, B, C, h, base + y.reshape(d, m) @ P, zeta), np.zeros(d * m),
                   method="BFGS", options={"gtol": 1e-12, "maxiter": 10_000})
    return const - 2 * res.fun


def test_10_appendix_algebra(verdict):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(50):
        d, m = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        A = rng.normal(size=(d, d))
        Q = A @ A.T + 0.5 * np.eye(d)
        B = rng.normal(size=(d, m, m))
        B = B + np.swapaxes(B, 1, 2)
        C = rng.normal(size=(m, m))
        C = 0.5 * (C + C.T)
        zeta, g, h, n = rng.normal(size=m), rng.normal(size=d), float(rng.normal()), int(rng.integers(1, 6))
        out = lagrange_maximizer(Q, B, C, h, zeta, g, n, A0_phi=0.3, lam=1.0, phi=2.0)
        F = brute_force_F(Q, B, C, h, zeta, g, n, (0.3 + 2 * h * 2.0 - 2.0) / n)
        worst = max(worst, abs(out["Fmax"] - F) / max(1.0, abs(F)))
    spec = ex1()
    fmax = -math.inf
    for r in np.linspace(0.0, 6.0, 13):
        for ang in np.linspace(0, 2 * math.pi, 12, endpoint=False):
            x = r * np.array([math.cos(ang), math.sin(ang)])
            X = x[None]
            for ph in np.linspace(0, math.pi, 6, endpoint=False):
                zeta = np.array([math.cos(ph), math.sin(ph)])
                out = lagrange_maximizer(spec.eval_Q(0.0, X)[0], spec.eval_B(0.0, X)[0], spec.eval_C(0.0, X)[0], 0.0,
                                         zeta, 2 * x, 1, A0_phi=2.0 * spec.d, lam=5.0, phi=1 + x @ x)
                fmax = max(fmax, out["Fmax"])
    ok = worst <= 1e-6 and fmax <= 1e-12
    verdict(10, ok, f"max relative gap to brute force {worst:.2e} over 50 instances; Fmax on ex1 {fmax:.4g}", 60)


def _check(path, seed=None):
    cfg = load_config(path)
    b = ReportBundle(cfg.run_id, "check")
    run_hypotheses(cfg, b, seed)
    return b


def test_11_hypothesis_regression(verdict):
    shipped = {name: _check(os.path.join(CONFIG_DIR, f"{name}.cfg")) for name in ("ex1", "ex2")}
    ok = all(not b.errors and {h["verdict"] for h in b.hypotheses} == {SATISFIED} for b in shipped.values())
    targets = {"ex1_b_le_2a.cfg": "K_nonneg", "ex2_delta_lt_b.cfg": "decomposition", "ex2_small_chat.cfg": "gradient"}
    found = []
    for name, hid in targets.items():
        a, b = (_check(os.path.join(MUTATED_DIR, name)) for _ in range(2))
        ha = next(h for h in a.hypotheses if h["hypothesis_id"] == hid)
        hb = next(h for h in b.hypotheses if h["hypothesis_id"] == hid)
        hit = ha["verdict"] == VIOLATED and ha["witness"] is not None and ha["witness"] == hb["witness"]
        found.append(f"{name}:{hid}={'violated' if hit else ha['verdict']}")
        ok = ok and hit
    verdict(11, ok, "shipped ex1/ex2 all satisfied; " + ", ".join(found), 60)


def test_12_domain_convergence(verdict):
    spec = heat_spec(d=2, q=10.0)
    rep = domain_convergence(spec, lambda X: bump(X, 1.0), [4.0, 6.0, 8.0], 1.0, 0.0, 0.1, 1 / 8,
                             EvolutionConfig(dt=0.01), flavor="scalar_A")
    m = rep.metadata
    verdict(12, rep.passed, f"inner differences {[f'{x:.2e}' for x in m['differences']]}, "
                            f"D-N gaps {[f'{x:.2e}' for x in m['dirichlet_neumann_gaps']]}", 180)
