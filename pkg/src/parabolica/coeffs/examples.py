"""Built-in coefficient families with analytic derivatives.

``ex1``: ``Q = I``, ``B_i = -x_i (1+|x|^2)^a Bhat_i``,
``C = -|x|^2 (1+|x|^2)^b Chat``; constraints ``b > 2a >= 0``, and for the
dual field ``kappa = -|x|^c`` with ``c`` in ``(2+2a, 2+2b)``.

``ex2``: ``Q = (1+|x|^2)^delta I``,
``B_i = -x_i (1+|x|^2)^a I + (1+|x|^2)^b Bhat_i``,
``C = -(1+|x|^2)^c Chat``; constraints ``2b <= delta < a+1`` and
``c > max(2a, a+1)``, with ``kappa = -|x|^s``, ``s`` in ``(2+2a, 2c)``.
"""

import numpy as np

from .eig import eigh, lambda_extremes
from .expr import matrix_field, scalar_field, stacked, stacked_scalar
from .growth import Growth
from .spec import OperatorSpec

CATALOGUE = {
    "ex1": {
        "description": "Q = I, B_i = -x_i(1+|x|^2)^a Bhat_i, C = -|x|^2(1+|x|^2)^b Chat, kappa = -|x|^c",
        "constraints": ["b > 2a >= 0", "c in (2+2a, 2+2b)", "Bhat_i, Chat symmetric positive definite"],
        "defaults": {"d": 2, "m": 2, "a": 1.0, "b": 3.0, "c": 5.0, "xi": 0.1, "beta": 0.5, "gamma": 0.25},
    },
    "ex2": {
        "description": "Q = (1+|x|^2)^delta I, B_i = -x_i(1+|x|^2)^a I + (1+|x|^2)^b Bhat_i, "
                       "C = -(1+|x|^2)^c Chat, kappa = -|x|^s",
        "constraints": ["2b <= delta < a+1", "c > max(2a, a+1)", "s in (2+2a, 2c)",
                        "Bhat_i, Chat symmetric positive definite"],
        "defaults": {"d": 2, "m": 2, "delta": 1.0, "a": 1.5, "b": 0.5, "c": 3.5, "s": 6.0,
                     "gamma": 0.25, "beta": 0.5},
    },
}


class FamilyError(ValueError):
    pass


def _spd(M, name, size):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape == (1, 1) and size > 1:
        M = M[0, 0] * np.eye(size)
    if M.shape != (size, size):
        raise FamilyError(f"{name} must be {size}x{size}, got {M.shape}")
    lo, hi = lambda_extremes(M)
    if lo <= 0:
        raise FamilyError(f"{name} must be positive definite (lambda_min = {lo:.3e})")
    return M


def _hats(Bhat, Chat, d, m):
    Bh = np.eye(m) if Bhat is None else np.asarray(Bhat, dtype=float)
    if Bh.ndim <= 2:
        Bh = [Bh] * d
    if len(Bh) != d:
        raise FamilyError(f"need {d} matrices Bhat_i")
    Bh = np.stack([_spd(B, f"Bhat_{i + 1}", m) for i, B in enumerate(Bh)])
    Ch = _spd(np.eye(m) if Chat is None else Chat, "Chat", m)
    return Bh, Ch


def _rho(X):
    return 1.0 + np.sum(X * X, axis=1)


def _is_scalar_multiple(M):
    m = M.shape[-1]
    return np.allclose(M - np.trace(M) / m * np.eye(m), 0.0)


def ex1(d=2, m=2, a=1.0, b=3.0, c=5.0, Bhat=None, Chat=None, xi=0.1, beta=0.5, gamma=0.25):
    """Bounded diffusion, polynomially growing drift and potential."""
    Bh, Ch = _hats(Bhat, Chat, d, m)
    I = np.eye(m)
    tr = np.trace(Bh, axis1=1, axis2=2) / m
    Bt_hat = Bh - tr[:, None, None] * I
    notes = []
    if not (b > 2 * a >= 0):
        notes.append(f"b > 2a >= 0 fails (a={a}, b={b})")
    if not (2 + 2 * a < c < 2 + 2 * b):
        notes.append(f"c in (2+2a, 2+2b) fails (c={c})")
    scalar_hats = all(_is_scalar_multiple(B) for B in Bh)

    def Q(t, X):
        return np.broadcast_to(np.eye(d), (X.shape[0], d, d))

    def B(t, X):
        w = -X * _rho(X)[:, None] ** a
        return w[:, :, None, None] * Bh[None]

    def dB(t, X):
        r = _rho(X)
        # D_l w_i = -(delta_il rho^a + 2a x_i x_l rho^(a-1))
        Dw = -(np.eye(d)[None] * (r ** a)[:, None, None]
               + 2 * a * X[:, :, None] * X[:, None, :] * (r ** (a - 1))[:, None, None])
        return Dw[:, :, :, None, None] * Bh[None, None]

    def C(t, X):
        r = _rho(X)
        w = -(r - 1.0) * r ** b
        return w[:, None, None] * Ch

    def dC(t, X):
        r = _rho(X)
        dw = -(2 * X * (r ** b)[:, None] + 2 * b * X * ((r - 1.0) * r ** (b - 1))[:, None])
        return dw[:, :, None, None] * Ch

    def zeros_dQ(t, X):
        return np.zeros((X.shape[0], d, d, d))

    def zeros_d2Q(t, X):
        return np.zeros((X.shape[0], d, d, d, d))

    def bfun(t, X):
        return -X * (_rho(X)[:, None] ** a) * tr

    def Btilde(t, X):
        w = -X * _rho(X)[:, None] ** a
        return w[:, :, None, None] * Bt_hat[None]

    def db(t, X):
        r = _rho(X)
        Dw = -(np.eye(d)[None] * (r ** a)[:, None, None]
               + 2 * a * X[:, :, None] * X[:, None, :] * (r ** (a - 1))[:, None, None])
        # Dw[n, i, l] = D_l w_i; db[n, l, i] = D_l b_i
        return np.swapaxes(Dw, 1, 2) * tr[None, None, :]

    def dBtilde(t, X):
        r = _rho(X)
        Dw = -(np.eye(d)[None] * (r ** a)[:, None, None]
               + 2 * a * X[:, :, None] * X[:, None, :] * (r ** (a - 1))[:, None, None])
        return Dw[:, :, :, None, None] * Bt_hat[None, None]

    def kappa(t, X):
        return -np.linalg.norm(X, axis=1) ** c

    def k_bound(t, X):
        return np.zeros(X.shape[0])

    bt_growth = Growth(0, 0.0) if scalar_hats else Growth(1, 1 + 2 * a)
    growth = {
        "lambda_Q": Growth(1, 0.0), "Lambda_Q": Growth(1, 0.0),
        "Lambda_C": Growth(-1, 2 + 2 * b),
        "B": Growth(1, 1 + 2 * a), "Btilde": bt_growth,
        "b": Growth(0, 0.0) if np.allclose(tr, 0) else Growth(1, 1 + 2 * a),
        "drift_radial_max": Growth(-1, 2 + 2 * a), "drift_radial_min": Growth(-1, 2 + 2 * a),
        "b_radial": Growth(-1, 2 + 2 * a),
        "neg_divB": Growth(1, 2 * a),
        "kappa": Growth(-1, c),
        "Lambda_Db": Growth(-1, 2 * a),
        "dQ": Growth(0, 0.0), "d2Q": Growth(0, 0.0),
        "dC": Growth(1, 1 + 2 * b),
        "dBtilde": Growth(0, 0.0) if scalar_hats else Growth(1, 2 * a),
        "k": Growth(0, 0.0),
    }
    params = {"d": d, "m": m, "a": a, "b": b, "c": c, "xi": xi, "beta": beta, "gamma": gamma,
              "Bhat": Bh.tolist(), "Chat": Ch.tolist()}
    return OperatorSpec(
        d=d, m=m, Q=Q, B=B, C=C, dQ=zeros_dQ, dB=dB, dC=dC, d2Q=zeros_d2Q,
        b=bfun, Btilde=Btilde, db=db, dBtilde=dBtilde,
        sigma=1.0, beta=beta, gamma=gamma, xi=lambda t: xi, k_bound=k_bound, kappa=kappa,
        growth=growth, autonomous=True, name="ex1", params=params,
        constraints_violated=bool(notes), constraint_notes=tuple(notes),
    )


def ex2(d=2, m=2, delta=1.0, a=1.5, b=0.5, c=3.5, s=None, Bhat=None, Chat=None, xi=None,
        beta=0.5, gamma=0.25):
    """Unbounded diffusion ``(1+|x|^2)^delta I`` with the ex1-type drift and potential."""
    if Bhat is None:
        Bhat = 0.5 * np.eye(m)
    if Chat is None:
        Chat = 2.0 * np.eye(m)
    Bh, Ch = _hats(Bhat, Chat, d, m)
    I = np.eye(m)
    if s is None:
        s = 0.5 * (2 + 2 * a + 2 * c) if 2 * c > 2 + 2 * a else 2.5 + 2 * a
    notes = []
    if not (2 * b <= delta < a + 1):
        notes.append(f"2b <= delta < a+1 fails (delta={delta}, a={a}, b={b})")
    if not (c > max(2 * a, a + 1)):
        notes.append(f"c > max(2a, a+1) fails (c={c}, a={a})")
    if not (2 + 2 * a < s < 2 * c):
        notes.append(f"s in (2+2a, 2c) fails (s={s})")
    if xi is None:
        # |(Btilde_i)_jk| <= rho^b |Bhat_i|_2 <= xi rho^delta when b <= delta
        xi = float(max(np.max(np.abs(eigh(B))) for B in Bh))

    def Q(t, X):
        return (_rho(X) ** delta)[:, None, None] * np.eye(d)

    def dQ(t, X):
        g = 2 * delta * X * (_rho(X) ** (delta - 1))[:, None]
        return g[:, :, None, None] * np.eye(d)

    def d2Q(t, X):
        r = _rho(X)
        H = (2 * delta * np.eye(d)[None] * (r ** (delta - 1))[:, None, None]
             + 4 * delta * (delta - 1) * X[:, :, None] * X[:, None, :] * (r ** (delta - 2))[:, None, None])
        return H[:, :, :, None, None] * np.eye(d)

    def bfun(t, X):
        return -X * _rho(X)[:, None] ** a

    def Btilde(t, X):
        return (_rho(X) ** b)[:, None, None, None] * Bh[None]

    def B(t, X):
        return bfun(t, X)[:, :, None, None] * I + Btilde(t, X)

    def db(t, X):
        r = _rho(X)
        Dw = -(np.eye(d)[None] * (r ** a)[:, None, None]
               + 2 * a * X[:, :, None] * X[:, None, :] * (r ** (a - 1))[:, None, None])
        return np.swapaxes(Dw, 1, 2)

    def dBtilde(t, X):
        g = 2 * b * X * (_rho(X) ** (b - 1))[:, None]
        return g[:, :, None, None, None] * Bh[None, None]

    def dB(t, X):
        return db(t, X)[:, :, :, None, None] * I + dBtilde(t, X)

    def C(t, X):
        return -(_rho(X) ** c)[:, None, None] * Ch

    def dC(t, X):
        g = -2 * c * X * (_rho(X) ** (c - 1))[:, None]
        return g[:, :, None, None] * Ch

    def kappa(t, X):
        return -np.linalg.norm(X, axis=1) ** s

    def k_bound(t, X):
        # |D_l q_ii| = 2 delta |x_l| rho^(delta-1) <= delta rho^delta since 2|x| <= 1+|x|^2
        return np.full(X.shape[0], float(delta))

    growth = {
        "lambda_Q": Growth(1, 2 * delta), "Lambda_Q": Growth(1, 2 * delta),
        "Lambda_C": Growth(-1, 2 * c),
        "B": Growth(1, max(1 + 2 * a, 2 * b)), "Btilde": Growth(1, 2 * b), "b": Growth(1, 1 + 2 * a),
        "drift_radial_max": Growth(-1, 2 + 2 * a), "drift_radial_min": Growth(-1, 2 + 2 * a),
        "b_radial": Growth(-1, 2 + 2 * a),
        "neg_divB": Growth(1, 2 * a),
        "kappa": Growth(-1, s),
        "Lambda_Db": Growth(-1, 2 * a),
        "dQ": Growth(1 if delta else 0, 2 * delta - 1), "d2Q": Growth(1 if delta else 0, 2 * delta - 2),
        "dC": Growth(1, 2 * c - 1),
        "dBtilde": Growth(1 if b else 0, 2 * b - 1),
        "k": Growth(1 if delta else 0, 0.0),
    }
    params = {"d": d, "m": m, "delta": delta, "a": a, "b": b, "c": c, "s": s, "xi": xi,
              "beta": beta, "gamma": gamma, "Bhat": Bh.tolist(), "Chat": Ch.tolist()}
    return OperatorSpec(
        d=d, m=m, Q=Q, B=B, C=C, dQ=dQ, dB=dB, dC=dC, d2Q=d2Q,
        b=bfun, Btilde=Btilde, db=db, dBtilde=dBtilde,
        sigma=1.0, beta=beta, gamma=gamma, xi=lambda t: xi, k_bound=k_bound, kappa=kappa,
        growth=growth, autonomous=True, name="ex2", params=params,
        constraints_violated=bool(notes), constraint_notes=tuple(notes),
    )


def heat_spec(d=1, m=1, q=1.0, c=0.0, xi=0.0, beta=0.25, gamma=0.25):
    """``q Laplacian + c`` acting componentwise; the baseline for closed-form checks."""
    I = np.eye(m)

    def Q(t, X):
        return np.broadcast_to(q * np.eye(d), (X.shape[0], d, d))

    def B(t, X):
        return np.zeros((X.shape[0], d, m, m))

    def C(t, X):
        return np.broadcast_to(c * I, (X.shape[0], m, m))

    def zeros(*shape):
        return lambda t, X: np.zeros((X.shape[0],) + shape)

    growth = {
        "lambda_Q": Growth(1, 0.0), "Lambda_Q": Growth(1, 0.0),
        "Lambda_C": Growth(int(np.sign(c)), 0.0),
        "B": Growth(0, 0.0), "Btilde": Growth(0, 0.0), "b": Growth(0, 0.0),
        "drift_radial_max": Growth(0, 0.0), "drift_radial_min": Growth(0, 0.0),
        "b_radial": Growth(0, 0.0), "neg_divB": Growth(0, 0.0), "kappa": Growth(0, 0.0),
        "Lambda_Db": Growth(0, 0.0), "dQ": Growth(0, 0.0), "d2Q": Growth(0, 0.0),
        "dC": Growth(0, 0.0), "dBtilde": Growth(0, 0.0), "k": Growth(0, 0.0),
    }
    return OperatorSpec(
        d=d, m=m, Q=Q, B=B, C=C, dQ=zeros(d, d, d), dB=zeros(d, d, m, m), dC=zeros(d, m, m),
        d2Q=zeros(d, d, d, d), b=zeros(d), Btilde=zeros(d, m, m), db=zeros(d, d),
        dBtilde=zeros(d, d, m, m), sigma=1.0, beta=beta, gamma=gamma, xi=lambda t: xi,
        k_bound=lambda t, X: np.zeros(X.shape[0]), kappa=lambda t, X: np.zeros(X.shape[0]),
        growth=growth, autonomous=True, name="heat",
        params={"d": d, "m": m, "q": q, "c": c, "xi": xi},
    )


def example_family(family_id, **params):
    """Build a catalogue family; constraint failures are flagged, not raised."""
    if family_id == "ex1":
        return ex1(**params)
    if family_id == "ex2":
        return ex2(**params)
    raise FamilyError(f"unknown family {family_id!r}; known: {sorted(CATALOGUE)}")


def spec_from_expressions(d, m, Q, B, C, b=None, kappa=None, hfun=None, xi="0", k=None,
                          growth=None, sigma=1.0, beta=0.25, gamma=0.25, name="expr",
                          time_interval=(-np.inf, np.inf)):
    """Build a spec from expression strings (see :mod:`parabolica.coeffs.expr`).

    ``B`` is a list of ``d`` matrix strings. When ``b`` (a list of ``d``
    scalar strings) is given, ``Btilde_i = B_i - b_i I``.
    """
    if len(B) != d:
        raise FamilyError(f"need {d} drift matrices, got {len(B)}")
    Qf = matrix_field(Q, d, d)
    Bf = [matrix_field(e, d, m) for e in B]
    Cf = matrix_field(C, d, m)
    Bval, Bgrad = stacked(Bf)
    xif = scalar_field(xi, 1)
    fields = [Qf, Cf, *Bf]
    kw = {}
    if b is not None:
        if len(b) != d:
            raise FamilyError(f"need {d} scalar drift parts, got {len(b)}")
        bf = [scalar_field(e, d) for e in b]
        bval, bgrad = stacked_scalar(bf)
        I = np.eye(m)
        kw.update(
            b=bval, db=bgrad,
            Btilde=lambda t, X: Bval(t, X) - bval(t, X)[:, :, None, None] * I,
            dBtilde=lambda t, X: Bgrad(t, X) - bgrad(t, X)[..., None, None] * I,
        )
        fields += bf
    if kappa is not None:
        kf = scalar_field(kappa, d)
        kw["kappa"] = kf.value
        fields.append(kf)
    if hfun is not None:
        hf = scalar_field(hfun, d)
        kw["hfun"] = hf.value
        fields.append(hf)
    if k is not None:
        kk = scalar_field(k, d)
        kw["k_bound"] = kk.value
        fields.append(kk)
    autonomous = not any(f.depends_on_time() for f in fields)
    return OperatorSpec(
        d=d, m=m, Q=Qf.value, B=Bval, C=Cf.value,
        dQ=Qf.grad, dB=Bgrad, dC=Cf.grad, d2Q=Qf.hess,
        xi=lambda t: float(xif.value(t, np.zeros((1, 1)))[0]),
        sigma=sigma, beta=beta, gamma=gamma, growth=dict(growth or {}),
        autonomous=autonomous, name=name, time_interval=time_interval,
        params={"Q": Q, "B": list(B), "C": C, "b": None if b is None else list(b),
                "kappa": kappa, "hfun": hfun, "xi": xi, "k": k},
        **kw,
    )
