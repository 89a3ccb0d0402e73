"""Sampled and asymptotic verification of the structural hypotheses.

Every check samples a space-time box (see :mod:`parabolica.sampling`) and
combines the sampled extremum with a leading-term verdict computed from
the growth exponents declared on the spec.

Verdict rules
-------------
* a sampled margin below ``-tau * scale`` is ``violated`` and carries the
  witness that produced it;
* otherwise, an asymptotic verdict of ``unbounded`` (the functional
  provably escapes in the bad direction) is ``violated`` when the samples
  confirm the escape (the full-box extremum beats the half-box one) and
  ``inconclusive`` when they do not; ``unknown`` is ``inconclusive``;
* otherwise ``satisfied_on_samples``.

For finiteness conditions the margin is the growth gap: the half-box
extremum minus the full-box extremum (for a supremum), which is negative
exactly when the samples still grow at the edge of the box.
"""

from dataclasses import dataclass, field
import math
from typing import Callable, Optional

import numpy as np

from .coeffs.eig import eig_extremes, max_asymmetry
from .coeffs.functionals import (
    H_expression, L_expression, SigmaError, bracket_term, drift_matrix,
    extreme_directions, gradient_functionals, quad, safe_inverse, _kappa_values,
)
from .coeffs.growth import BOUNDED, UNBOUNDED, UNKNOWN, Growth, bounded_above, bounded_below, leading_limit
from .coeffs.spec import MissingDataError
from .sampling import SamplePlan, refine_direction, sampled_extremum, sphere_sample

SATISFIED = "satisfied_on_samples"
VIOLATED = "violated"
INCONCLUSIVE = "inconclusive"
TAU = 1e-9
_SEVERITY = {SATISFIED: 0, INCONCLUSIVE: 1, VIOLATED: 2}


@dataclass
class HypothesisReport:
    hypothesis_id: str
    verdict: str
    margin: float
    witness: Optional[dict]
    samples_used: int
    asymptotic_verdict: str
    details: dict = field(default_factory=dict)
    fd_used: bool = False

    def to_dict(self):
        w = None
        if self.witness is not None:
            w = {"t": float(self.witness["t"]), "x": [float(v) for v in self.witness["x"]],
                 "eta": None if self.witness.get("eta") is None else [float(v) for v in self.witness["eta"]]}
        return {"hypothesis_id": self.hypothesis_id, "verdict": self.verdict, "margin": _num(self.margin),
                "witness": w, "samples": self.samples_used, "asymptotic": self.asymptotic_verdict,
                "fd_used": self.fd_used, "details": _jsonable(self.details)}


def _num(v):
    v = float(v)
    return v if math.isfinite(v) else str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return _num(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def worst(verdicts):
    return max(verdicts, key=lambda v: _SEVERITY[v])


def _witness(t, x, eta=None):
    return {"t": float(t), "x": np.asarray(x, float).copy(), "eta": None if eta is None else np.asarray(eta, float)}


def _decide(hid, margin, scale, asym, witness, samples, details, fd=False, gap=None, tau=TAU):
    """Apply the verdict rules.

    ``margin`` is the sign margin (``None`` for pure finiteness checks);
    ``gap`` is the growth gap used when the asymptotics say the condition
    fails at infinity.
    """
    tol = tau * max(1.0, scale)
    details = dict(details)
    if margin is not None and margin < -tol:
        details["margin_kind"] = "sign"
        return HypothesisReport(hid, VIOLATED, margin, witness, samples, asym, details, fd)
    if asym == UNBOUNDED:
        if gap is not None and gap < -tol:
            details["margin_kind"] = "gap"
            return HypothesisReport(hid, VIOLATED, gap, witness, samples, asym, details, fd)
        details["margin_kind"] = "sign" if margin is not None else "gap"
        return HypothesisReport(hid, INCONCLUSIVE, margin if margin is not None else (gap or 0.0),
                                witness, samples, asym, details, fd)
    verdict = INCONCLUSIVE if asym == UNKNOWN else SATISFIED
    details["margin_kind"] = "sign" if margin is not None else "gap"
    m = margin if margin is not None else (gap if gap is not None else 0.0)
    return HypothesisReport(hid, verdict, m, witness, samples, asym, details, fd)


def default_interval(spec, J=None):
    if J is not None:
        return (float(J[0]), float(J[1]))
    a, b = spec.time_interval
    a = 0.0 if math.isinf(a) else a
    b = a + 1.0 if math.isinf(b) else b
    return (a, b)


def _g(spec, key, fallback=None):
    g = spec.growth.get(key)
    if g is None and fallback is not None:
        g = spec.growth.get(fallback)
    return g


def _neg(g):
    return None if g is None else g.times(-1)


# ---------------------------------------------------------------------------
# ellipticity and symmetry

def check_ellipticity(spec, J=None, plan=None):
    """Uniform ellipticity: ``nu0 = inf lambda_Q > 0``."""
    plan = plan or SamplePlan()
    J = default_interval(spec, J)
    res = sampled_extremum(lambda t, X: eig_extremes(spec.eval_Q(t, X))[0], spec, J, plan, "min", refine=False)
    nu0 = res["value"]
    t, x = res["argext"]
    g = spec.growth.get("lambda_Q")
    if g is None:
        asym = UNKNOWN
    elif g.sign > 0 and g.exponent >= 0:
        asym = BOUNDED
    else:
        asym = UNBOUNDED
    gap = nu0 - res["inner_value"]
    details = {"nu0_est": nu0, "inner_min": res["inner_value"]}
    # a nonpositive eigenvalue is a sign failure; decay at infinity is a growth failure
    rep = _decide("ellipticity", nu0 if nu0 <= 0 else None, abs(nu0), asym, _witness(t, x),
                  res["samples"], details, gap=gap)
    if nu0 <= 0 and rep.verdict != VIOLATED:
        # the condition is strict, so a sampled zero eigenvalue already fails
        rep.verdict, rep.margin = VIOLATED, nu0
        rep.details["margin_kind"] = "sign"
    if rep.verdict == SATISFIED:
        rep.margin = nu0
        rep.details["margin_kind"] = "sign"
    return rep


def check_symmetry(spec, J=None, plan=None):
    plan = plan or SamplePlan()
    J = default_interval(spec, J)
    X = plan.points(spec.d)
    worst_asym, wt = 0.0, None
    for t in plan.times(J, spec.autonomous):
        for name, M in (("Q", spec.eval_Q(t, X, False)), ("B", spec.eval_B(t, X, False)),
                        ("C", spec.eval_C(t, X, False))):
            a = max_asymmetry(M) / max(1.0, float(np.max(np.abs(M))))
            if a > worst_asym:
                worst_asym, wt = a, (t, name)
    margin = spec.tol_sym - worst_asym
    verdict = SATISFIED if margin >= 0 else VIOLATED
    return HypothesisReport("symmetry", verdict, margin, None, int(X.shape[0]), BOUNDED,
                            {"max_relative_asymmetry": worst_asym, "where": None if wt is None else wt[1]})


# ---------------------------------------------------------------------------
# K_eta families

def K_growth_terms(spec, tilde=False):
    bt = _g(spec, "Btilde", "B")
    lam = spec.growth.get("lambda_Q")
    if bt is None or lam is None:
        bracket = None
    elif bt.sign == 0:
        bracket = Growth(0, 0.0)
    else:
        bracket = Growth(-1, 2 * bt.exponent - lam.exponent)
    terms = [bracket, _neg(spec.growth.get("Lambda_C"))]
    if tilde:
        terms += [_neg(spec.growth.get("neg_divB")), spec.growth.get("kappa")]
    return terms


def _K_values(spec, t, X, E, tilde, kappa):
    Q = spec.eval_Q(t, X)
    K = bracket_term(safe_inverse(Q), spec.eval_B(t, X), E) - 4.0 * quad(spec.eval_C(t, X), E)
    fd = False
    if tilde:
        divB, fd = spec.divB(t, X)
        K = K + 4.0 * quad(divB, E) + 4.0 * _kappa_values(spec, t, X, kappa)[:, None]
    return K, fd


def _K_single(spec, t, x, eta, tilde, kappa):
    K, _ = _K_values(spec, t, np.atleast_2d(x), np.atleast_2d(eta), tilde, kappa)
    return float(K[0, 0])


def check_K_nonneg(spec, J=None, plan=None, sphere=None, weak=False, tilde=False, kappa=None, chunk=4096):
    """Nonnegativity (or, in weak mode, lower boundedness) of ``K_eta`` or its dual variant.

    The report's ``details`` carry ``c_J = max(0, -inf K)``, the shift
    used to rescale the problem in weak mode.
    """
    plan = plan or SamplePlan()
    J = default_interval(spec, J)
    sphere = sphere or sphere_sample(spec.m, plan.seed)
    E = sphere.directions
    X = plan.points(spec.d)
    inner = np.linalg.norm(X, axis=1) <= 0.5 * plan.box + 1e-12
    best, arg, inner_best, fd = math.inf, None, math.inf, False
    for t in plan.times(J, spec.autonomous):
        for lo in range(0, X.shape[0], chunk):
            Xc = X[lo:lo + chunk]
            K, f = _K_values(spec, t, Xc, E, tilde, kappa)
            fd = fd or f
            kmin = K.min(axis=1)
            i = int(np.argmin(kmin))
            if kmin[i] < best:
                best, arg = float(kmin[i]), (t, Xc[i].copy(), E[int(np.argmin(K[i]))].copy())
            msk = inner[lo:lo + chunk]
            if np.any(msk):
                inner_best = min(inner_best, float(kmin[msk].min()))
    t, x, eta = arg
    if spec.m > 3:
        eta, _ = refine_direction(lambda v: _K_single(spec, t, x, v, tilde, kappa), eta, "min")
    value = _K_single(spec, t, x, eta, tilde, kappa)
    base = "tilde_K_nonneg" if tilde else "K_nonneg"
    hid = base + ("_weak" if weak else "")
    asym = bounded_below(K_growth_terms(spec, tilde))
    details = {"inf_sampled": value, "c_J": max(0.0, -value), "inner_min": inner_best,
               "sphere_scheme": sphere.scheme, "directions": int(E.shape[0])}
    if tilde:
        kap = _kappa_values(spec, t, plan.points(spec.d), kappa)
        details["kappa0"] = float(np.max(kap))
    samples = int(X.shape[0] * E.shape[0] * len(plan.times(J, spec.autonomous)))
    gap = value - inner_best
    return _decide(hid, None if weak else value, abs(value), asym, _witness(t, x, eta), samples,
                   details, fd, gap=gap)


# ---------------------------------------------------------------------------
# Lyapunov functions

@dataclass(frozen=True)
class LyapunovSpec:
    """A positive function blowing up at infinity, with its derivatives.

    ``phi(X) -> (N,)``, ``grad(X) -> (N, d)``, ``hess(X) -> (N, d, d)``.
    """

    phi: Callable
    grad: Callable
    hess: Callable
    lambda_J: float
    growth: float = 2.0

    def __post_init__(self):
        if self.growth <= 0:
            raise ValueError("a Lyapunov function must blow up: growth exponent must be positive")


def quadratic_lyapunov(lambda_J=1.0):
    """``phi(x) = 1 + |x|^2``."""
    return LyapunovSpec(
        phi=lambda X: 1.0 + np.sum(X * X, axis=1),
        grad=lambda X: 2.0 * X,
        hess=lambda X: np.broadcast_to(2.0 * np.eye(X.shape[1]), (X.shape[0], X.shape[1], X.shape[1])),
        lambda_J=lambda_J, growth=2.0,
    )


def lyapunov_from_expression(text, d, lambda_J, growth):
    from .coeffs.expr import scalar_field

    f = scalar_field(text, d)
    return LyapunovSpec(phi=lambda X: f.value(0.0, X), grad=lambda X: f.grad(0.0, X),
                        hess=lambda X: f.hess(0.0, X), lambda_J=lambda_J, growth=growth)


LYAPUNOV_FLAVORS = ("A_eta_family", "A_scalar", "A_eta_tilde_family", "A_tilde_scalar")


def lyapunov_values(spec, lyap, which, t, X, kappa=None):
    """``(operator phi) - lambda phi`` at each point, maximized over directions.

    Returns ``(values, eta)`` where ``eta`` (or ``None``) are the maximizing
    directions; for the families the supremum over the sphere is exact
    because ``<b_eta, D phi>`` is the Rayleigh quotient of ``sum D_i phi B_i``.
    """
    Q = spec.eval_Q(t, X)
    H = lyap.hess(X)
    g = lyap.grad(X)
    phi = lyap.phi(X)
    divQ, _ = spec.divQ(t, X)
    base = np.einsum("nij,nji->n", Q, H) + np.einsum("ni,ni->n", divQ, g) - lyap.lambda_J * phi
    eta = None
    if which in ("A_eta_family", "A_eta_tilde_family"):
        lo, vlo, hi, vhi = extreme_directions(drift_matrix(spec, t, X, g))
        if which == "A_eta_family":
            drift, eta = hi, vhi
        else:
            drift, eta = -lo, vlo
    elif which in ("A_scalar", "A_tilde_scalar"):
        drift = np.einsum("ni,ni->n", spec.eval_b(t, X), g)
        if which == "A_tilde_scalar":
            drift = -drift
    else:
        raise ValueError(f"unknown Lyapunov flavor {which!r}; expected one of {LYAPUNOV_FLAVORS}")
    val = base + drift
    if "tilde" in which:
        val = val + 2.0 * _kappa_values(spec, t, X, kappa) * phi
    return val, eta


def lyapunov_growth_terms(spec, lyap, which):
    e = lyap.growth
    G = spec.growth
    terms = [None if G.get("Lambda_Q") is None else G["Lambda_Q"].times(1, e - 2),
             None if G.get("dQ") is None else G["dQ"].times(1, e - 1),
             Growth(-int(np.sign(lyap.lambda_J)), e)]
    key = {"A_eta_family": ("drift_radial_max", 1), "A_eta_tilde_family": ("drift_radial_min", -1),
           "A_scalar": ("b_radial", 1), "A_tilde_scalar": ("b_radial", -1)}[which]
    dr = G.get(key[0])
    terms.append(None if dr is None else dr.times(key[1], e - 2))
    if "tilde" in which:
        k = G.get("kappa")
        terms.append(None if k is None else k.times(1, e))
    return terms


def check_lyapunov(spec, lyap, which="A_eta_family", kappa=None, J=None, plan=None):
    """Finiteness of ``sup (operator phi - lambda phi)`` for one of :data:`LYAPUNOV_FLAVORS`."""
    plan = plan or SamplePlan()
    J = default_interval(spec, J)
    if "tilde" in which and kappa is None and spec.kappa is None:
        raise MissingDataError(f"{which} needs kappa")
    X = plan.points(spec.d)
    inner = np.linalg.norm(X, axis=1) <= 0.5 * plan.box + 1e-12
    phimin = float(np.min(lyap.phi(X)))
    best, arg, inner_best = -math.inf, None, -math.inf
    times = plan.times(J, spec.autonomous)
    for t in times:
        val, eta = lyapunov_values(spec, lyap, which, t, X, kappa)
        i = int(np.argmax(val))
        if val[i] > best:
            best, arg = float(val[i]), (t, X[i].copy(), None if eta is None else eta[i].copy())
        inner_best = max(inner_best, float(np.max(val[inner])))
    t, x, eta = arg
    asym = bounded_above(lyapunov_growth_terms(spec, lyap, which))
    gap = inner_best - best
    hid = "lyapunov_" + which
    details = {"sup_sampled": best, "inner_sup": inner_best, "lambda_J": lyap.lambda_J, "phi_min": phimin}
    if phimin <= 0:
        i = int(np.argmin(lyap.phi(X)))
        return HypothesisReport(hid, VIOLATED, phimin, _witness(t, X[i]), int(X.shape[0] * len(times)),
                                asym, details)
    return _decide(hid, None, abs(best), asym, _witness(t, x, eta), int(X.shape[0] * len(times)),
                   details, gap=gap)


# ---------------------------------------------------------------------------
# decomposition and H

def decomposition_margin(spec, t, X):
    Bt = spec.eval_Btilde(t, X)
    lamQ, _ = eig_extremes(spec.eval_Q(t, X))
    bound = spec.xi_at(t) * lamQ ** spec.sigma
    return bound - np.max(np.abs(Bt).reshape(X.shape[0], -1), axis=1)


def check_decomposition(spec, J=None, plan=None):
    """Entrywise bound ``|(Btilde_i)_jk| <= xi lambda_Q^sigma`` and exactness of the split."""
    if not spec.has_decomposition:
        raise MissingDataError("decomposition B_i = b_i I + Btilde_i not supplied; provide b and Btilde")
    plan = plan or SamplePlan()
    J = default_interval(spec, J)
    res = sampled_extremum(lambda t, X: decomposition_margin(spec, t, X), spec, J, plan, "min", refine=False)
    X = plan.points(spec.d)
    resid = max(spec.decomposition_residual(t, X) for t in plan.times(J, spec.autonomous))
    Bscale = max(1.0, float(np.max(np.abs(spec.eval_B(J[0], X)))))
    bt = _g(spec, "Btilde")
    lam = spec.growth.get("lambda_Q")
    if bt is None or lam is None:
        asym = UNKNOWN
    else:
        xi_pos = spec.xi_at(J[0]) > 0
        lim = leading_limit([bt, Growth(-1 if xi_pos else 0, spec.sigma * lam.exponent)])
        asym = UNKNOWN if lim is None else (UNBOUNDED if lim > 0 else BOUNDED)
    t, x = res["argext"]
    margin = res["value"]
    details = {"min_margin": margin, "split_residual": resid}
    if resid > 1e-12 * Bscale:
        return HypothesisReport("decomposition", VIOLATED, -resid, _witness(t, x), res["samples"], asym, details)
    return _decide("decomposition", margin, abs(margin), asym, _witness(t, x), res["samples"], details,
                   gap=res["value"] - res["inner_value"])


def check_H(spec, J=None, plan=None, beta=None):
    """Finiteness of ``H_beta = sup(Lambda_C + beta d m^2 xi^2 lambda_Q^(2 sigma - 1))``."""
    from .coeffs.functionals import H_growth_terms

    plan = plan or SamplePlan()
    J = default_interval(spec, J)
    beta = spec.beta if beta is None else beta
    res = sampled_extremum(lambda t, X: H_expression(spec, t, X, beta), spec, J, plan, "max")
    asym = bounded_above(H_growth_terms(spec))
    t, x = res["sampled_argext"]
    details = {"H_sup": res["value"], "beta": beta, "inner_sup": res["inner_value"]}
    return _decide("H_beta", None, abs(res["value"]), asym, _witness(t, x), res["samples"], details,
                   gap=res["inner_value"] - res["sampled_value"])


def check_L2_dissipativity(spec, J=None, plan=None):
    """``Lambda_{2C - sum D_i B_i} <= L_J``; reports the sampled sup as ``L_J_est``."""
    plan = plan or SamplePlan()
    J = default_interval(spec, J)
    fd = [False]

    def fn(t, X):
        v, f = L_expression(spec, t, X)
        fd[0] = fd[0] or f
        return v

    res = sampled_extremum(fn, spec, J, plan, "max")
    asym = bounded_above([spec.growth.get("Lambda_C"), spec.growth.get("neg_divB")])
    t, x = res["sampled_argext"]
    details = {"L_J_est": res["value"], "L_J_argmax": {"t": res["argext"][0], "x": list(map(float, res["argext"][1]))},
               "inner_sup": res["inner_value"]}
    return _decide("L2_dissipativity", None, abs(res["value"]), asym, _witness(t, x), res["samples"],
                   details, fd[0], gap=res["inner_value"] - res["sampled_value"])


def check_kappa(spec, kappa=None, J=None, plan=None):
    """Upper bound ``kappa0`` of the dual scalar field."""
    plan = plan or SamplePlan()
    J = default_interval(spec, J)
    res = sampled_extremum(lambda t, X: _kappa_values(spec, t, X, kappa), spec, J, plan, "max")
    k = spec.growth.get("kappa")
    asym = UNKNOWN if k is None else (UNBOUNDED if leading_limit([k]) == 1 else BOUNDED)
    t, x = res["sampled_argext"]
    return _decide("kappa_bounded", None, abs(res["value"]), asym, _witness(t, x), res["samples"],
                   {"kappa0": res["value"], "inner_sup": res["inner_value"]},
                   gap=res["inner_value"] - res["sampled_value"])


# ---------------------------------------------------------------------------
# gradient hypotheses

def _dq_norms(spec, t, X):
    dQ, fd = spec.derivative("dQ", t, X)
    # |D_x q_ij| as the Euclidean norm over the derivative index
    return np.sqrt(np.sum(dQ ** 2, axis=1)).reshape(X.shape[0], -1).max(axis=1), fd


def check_gradient_hyps(spec, J=None, plan=None):
    """Three sub-checks: (a) ``|D q_ij| <= k lambda_Q``; (b) finiteness of the two
    gradient integrands; (c) ``Lambda_C <= -2 gamma d m^2 xi^2 lambda_Q``.
    """
    if spec.sigma != 1.0:
        raise SigmaError("gradient hypotheses stated for sigma=1 only")
    plan = plan or SamplePlan()
    J = default_interval(spec, J)
    G = spec.growth
    d, m = spec.d, spec.m
    fd = [False]

    def margin_a(t, X):
        n, f = _dq_norms(spec, t, X)
        fd[0] = fd[0] or f
        lamQ, _ = eig_extremes(spec.eval_Q(t, X))
        return spec.eval_scalar("k_bound", t, X, default=0.0) * lamQ - n

    def margin_c(t, X):
        lamQ, _ = eig_extremes(spec.eval_Q(t, X))
        _, LamC = eig_extremes(spec.eval_C(t, X))
        return -(LamC + 2.0 * spec.gamma * d * m * m * spec.xi_at(t) ** 2 * lamQ)

    def fin(key):
        def f(t, X):
            out = gradient_functionals(spec, t, X)
            fd[0] = fd[0] or out["fd_used"]
            return out[key]
        return f

    ra = sampled_extremum(margin_a, spec, J, plan, "min", refine=False)
    rc = sampled_extremum(margin_c, spec, J, plan, "min", refine=False)
    r1 = sampled_extremum(fin("fin1"), spec, J, plan, "max")
    r2 = sampled_extremum(fin("fin2"), spec, J, plan, "max")

    lam = G.get("lambda_Q")
    k = G.get("k")
    xi_pos = spec.xi_at(J[0]) > 0
    if G.get("dQ") is None or k is None or lam is None:
        asym_a = UNKNOWN
    elif G["dQ"].sign == 0:
        asym_a = BOUNDED
    else:
        lim = leading_limit([G["dQ"], Growth(-1 if k.sign else 0, k.exponent + lam.exponent)])
        asym_a = UNKNOWN if lim is None else (UNBOUNDED if lim > 0 else BOUNDED)
    kexp = 0.0 if k is None else max(k.exponent, 0.0) * (1 if k.sign else 0)
    lamg = None if lam is None else Growth(1, lam.exponent + 2 * kexp)
    t1 = [None if lam is None else Growth(1 if xi_pos else 0, lam.exponent), G.get("dC"), G.get("Lambda_C")]
    t2 = [G.get("d2Q"), G.get("dBtilde"), G.get("Lambda_Db"), G.get("Lambda_C"), lamg, G.get("dC")]
    asym_b = worst_asym([bounded_above(t1), bounded_above(t2)])
    if lam is None or G.get("Lambda_C") is None:
        asym_c = UNKNOWN
    else:
        lim = leading_limit([G["Lambda_C"], Growth(1 if xi_pos else 0, lam.exponent)])
        asym_c = UNKNOWN if lim is None else (UNBOUNDED if lim > 0 else BOUNDED)

    rep_a = _decide("gradient_a", ra["value"], abs(ra["value"]), asym_a, _witness(*ra["argext"]),
                    ra["samples"], {}, gap=None)
    rep_b = _decide("gradient_b", None, max(abs(r1["value"]), abs(r2["value"])), asym_b,
                    _witness(*r2["sampled_argext"]), r1["samples"], {},
                    gap=min(r1["inner_value"] - r1["sampled_value"], r2["inner_value"] - r2["sampled_value"]))
    rep_c = _decide("gradient_c", rc["value"], abs(rc["value"]), asym_c, _witness(*rc["argext"]),
                    rc["samples"], {}, gap=None)
    subs = {"a": rep_a, "b": rep_b, "c": rep_c}
    verdict = worst([r.verdict for r in subs.values()])
    pick = next((r for r in (rep_a, rep_c, rep_b) if r.verdict == verdict), rep_a)
    details = {
        "sub_verdicts": {k2: r.verdict for k2, r in subs.items()},
        "sub_margins": {k2: r.margin for k2, r in subs.items()},
        "sub_asymptotic": {k2: r.asymptotic_verdict for k2, r in subs.items()},
        "fin1_sup": r1["value"], "fin2_sup": r2["value"],
        "fin2_argmax": {"t": r2["argext"][0], "x": list(map(float, r2["argext"][1]))},
        "sign_condition_min": rc["value"],
    }
    return HypothesisReport("gradient", verdict, pick.margin, pick.witness,
                            ra["samples"] + rc["samples"] + r1["samples"] + r2["samples"],
                            worst_asym([asym_a, asym_b, asym_c]), details, fd[0])


def worst_asym(vals):
    if UNBOUNDED in vals:
        return UNBOUNDED
    if UNKNOWN in vals:
        return UNKNOWN
    return BOUNDED


def witness_value(spec, report, kappa=None, lyap=None):
    """The checked functional evaluated at the report's witness."""
    w = report.witness
    t, x, eta = w["t"], np.atleast_2d(w["x"]), w["eta"]
    hid = report.hypothesis_id
    if hid.startswith("K_nonneg") or hid.startswith("tilde_K_nonneg"):
        return _K_single(spec, t, x, eta, hid.startswith("tilde"), kappa)
    if hid == "ellipticity":
        return float(eig_extremes(spec.eval_Q(t, x))[0][0])
    if hid == "decomposition":
        return float(decomposition_margin(spec, t, x)[0])
    if hid in _LYAP_IDS:
        return float(lyapunov_values(spec, lyap, _LYAP_IDS[hid], t, x, kappa)[0][0])
    if hid == "gradient":
        sub = [k for k, v in report.details["sub_verdicts"].items() if v == report.verdict][0]
        lamQ, _ = eig_extremes(spec.eval_Q(t, x))
        if sub == "c":
            _, LamC = eig_extremes(spec.eval_C(t, x))
            return float(-(LamC + 2 * spec.gamma * spec.d * spec.m ** 2 * spec.xi_at(t) ** 2 * lamQ)[0])
        if sub == "a":
            n, _ = _dq_norms(spec, t, x)
            return float((spec.eval_scalar("k_bound", t, x, default=0.0) * lamQ - n)[0])
    raise ValueError(f"no re-evaluation rule for {hid!r}")


def reevaluate_margin(spec, report, kappa=None, lyap=None):
    """Recompute a report's margin from its witness.

    Sign margins are the functional itself; growth gaps compare the witness
    value with the stored half-box extremum.
    """
    v = witness_value(spec, report, kappa, lyap)
    det = report.details
    if det.get("margin_kind") == "sign":
        return v
    for key in ("inner_min",):
        if key in det:
            return v - det[key]
    for key in ("inner_sup",):
        if key in det:
            return det[key] - v
    raise ValueError("report lacks the half-box extremum needed to recompute its gap")


# ---------------------------------------------------------------------------
# the Lagrange-multiplier step of the uniform bound

def lagrange_maximizer(Q, B_list, C, h, zeta, grad_phi, n, A0_phi=0.0, lam=0.0, phi=0.0):
    """Closed-form maximizer of ``F = (1/n)(A0 + 2h - lam) phi - 2 V`` over the constraint set.

    ``V(xi, zeta) = sum q_ij <xi^i, xi^j> - sum <B_j xi^j, zeta> - <(C - h) zeta, zeta>``
    and the constraint set is ``<xi^j, zeta> = (2n)^-1 D_j phi`` for every ``j``.

    Parameters
    ----------
    Q : (d, d) positive definite
    B_list : (d, m, m)
    C : (m, m)
    h : float
        Value of the shift function at the point.
    zeta : (m,) nonzero
    grad_phi : (d,)
        Gradient of the (time-rescaled) Lyapunov function.
    n : int
    A0_phi, lam, phi : float
        ``div(Q D phi)``, the constant ``lambda`` and ``phi`` at the point;
        they only enter the constant part of ``F``.

    Returns
    -------
    dict
        ``xi0`` (d, m), ``V`` (value of V at the maximizer), ``Fmax``,
        ``Fmax_closed`` (the equivalent form through ``K_eta``),
        ``constraint_residual`` and ``lagrangian_residual``.
    """
    Q = np.asarray(Q, float)
    B = np.asarray(B_list, float)
    C = np.asarray(C, float)
    zeta = np.asarray(zeta, float)
    g = np.asarray(grad_phi, float)
    lo = eig_extremes(Q)[0]
    if float(lo) <= 0:
        from .coeffs.functionals import SingularDiffusionError
        raise SingularDiffusionError(lo)
    z2 = float(zeta @ zeta)
    if z2 == 0.0:
        raise ValueError("zeta must be nonzero")
    Qi = np.linalg.inv(Q)
    Bz = np.einsum("kab,b->ka", B, zeta)
    bz = Bz @ zeta
    proj = Bz - np.outer(bz / z2, zeta)
    xi0 = np.outer(g / (2.0 * n * z2), zeta) + 0.5 * Qi @ proj
    V = lagrange_V(Q, B, C, h, xi0, zeta)
    const = (A0_phi + 2.0 * h * phi - lam * phi) / n
    Fmax = const - 2.0 * V
    eta = zeta / math.sqrt(z2)
    K = float(bracket_term(Qi[None], B[None], eta[None])[0, 0] - 4.0 * eta @ C @ eta)
    b_eta = np.einsum("kab,a,b->k", B, eta, eta)
    A_eta_phi = A0_phi + b_eta @ g
    Fclosed = ((A_eta_phi + 2.0 * h * phi - lam * phi) / n - (g @ Q @ g) / (2.0 * n * n * z2)
               - 0.5 * z2 * (K + 4.0 * h))
    cons = np.abs(xi0 @ zeta - g / (2.0 * n))
    grad = 2.0 * Q @ xi0 - Bz
    tang = grad - np.outer(grad @ zeta / z2, zeta)
    return {"xi0": xi0, "V": V, "Fmax": Fmax, "Fmax_closed": Fclosed,
            "constraint_residual": float(np.max(cons)), "lagrangian_residual": float(np.linalg.norm(tang))}


def lagrange_V(Q, B, C, h, xi, zeta):
    """``V(xi, zeta)`` with ``xi`` of shape (d, m)."""
    xi = np.asarray(xi, float)
    return float(np.einsum("ij,ia,ja->", Q, xi, xi) - np.einsum("jab,jb,a->", B, xi, zeta)
                 - zeta @ (C - h * np.eye(len(zeta))) @ zeta)


# ---------------------------------------------------------------------------
# dispatch

HYPOTHESIS_IDS = (
    "symmetry", "ellipticity", "K_nonneg", "K_nonneg_weak", "tilde_K_nonneg", "tilde_K_nonneg_weak",
    "lyapunov_A_eta", "lyapunov_A", "lyapunov_tilde_A_eta", "lyapunov_tilde_A",
    "decomposition", "H_beta", "L2_dissipativity", "kappa_bounded", "gradient",
)
_LYAP_IDS = {"lyapunov_A_eta": "A_eta_family", "lyapunov_A": "A_scalar",
             "lyapunov_tilde_A_eta": "A_eta_tilde_family", "lyapunov_tilde_A": "A_tilde_scalar"}


def run_check(spec, hid, J=None, plan=None, lyap=None, kappa=None, sphere=None):
    """Run one hypothesis check by id."""
    if hid == "symmetry":
        return check_symmetry(spec, J, plan)
    if hid == "ellipticity":
        return check_ellipticity(spec, J, plan)
    if hid in ("K_nonneg", "K_nonneg_weak", "tilde_K_nonneg", "tilde_K_nonneg_weak"):
        return check_K_nonneg(spec, J, plan, sphere, weak=hid.endswith("_weak"),
                              tilde=hid.startswith("tilde"), kappa=kappa)
    if hid in _LYAP_IDS:
        if lyap is None:
            raise MissingDataError(f"{hid} needs a Lyapunov function")
        rep = check_lyapunov(spec, lyap, _LYAP_IDS[hid], kappa, J, plan)
        rep.hypothesis_id = hid
        return rep
    if hid == "decomposition":
        return check_decomposition(spec, J, plan)
    if hid == "H_beta":
        return check_H(spec, J, plan)
    if hid == "L2_dissipativity":
        return check_L2_dissipativity(spec, J, plan)
    if hid == "kappa_bounded":
        return check_kappa(spec, kappa, J, plan)
    if hid == "gradient":
        return check_gradient_hyps(spec, J, plan)
    raise ValueError(f"unknown hypothesis id {hid!r}; known: {', '.join(HYPOTHESIS_IDS)}")
