"""The coefficient family of a nonautonomous parabolic system.

All coefficient callables are vectorized over points: they take a time
``t`` (float) and an array ``X`` of shape ``(N, d)`` and return

==========  ====================  =======================================
name        shape                 meaning
==========  ====================  =======================================
Q           (N, d, d)             diffusion matrix
B           (N, d, m, m)          drift coupling ``B_i``
C           (N, m, m)             potential coupling
dQ          (N, d, d, d)          ``dQ[:, l] = D_l Q``
dB          (N, d, d, m, m)       ``dB[:, l, i] = D_l B_i``
dC          (N, d, m, m)          ``dC[:, l] = D_l C``
d2Q         (N, d, d, d, d)       ``d2Q[:, l, k] = D_l D_k Q``
b           (N, d)                scalar part of ``B_i = b_i I + Btilde_i``
Btilde      (N, d, m, m)          matrix remainder
db          (N, d, d)             ``db[:, l, i] = D_l b_i``
dBtilde     (N, d, d, m, m)       ``dBtilde[:, l, i] = D_l Btilde_i``
k_bound     (N,)                  the function ``k`` with ``|D q_ij| <= k lambda_Q``
kappa       (N,)                  scalar field for the dual conditions
hfun        (N,)                  scalar shift for the uniform bound
==========  ====================  =======================================

``xi`` maps ``t`` to a float. Missing derivatives fall back to centered
finite differences with step ``h_fd_scale * (1 + |x|)``; every evaluation
reports whether the fallback was used.
"""

from dataclasses import dataclass, field, replace
import math
from typing import Callable, Mapping, Optional

import numpy as np

from .eig import TAU_SYM, check_symmetric
from .growth import Growth

TAU_UNIT = 1e-12
GROWTH_KEYS = (
    "lambda_Q", "Lambda_Q", "Lambda_C", "B", "Btilde", "b",
    "drift_radial_max", "drift_radial_min", "b_radial", "neg_divB",
    "kappa", "Lambda_Db", "dQ", "dC", "d2Q", "dBtilde", "k",
)
DERIVATIVES = ("dQ", "dB", "dC", "d2Q", "db", "dBtilde")


class MissingDataError(ValueError):
    """A functional needs coefficient data the spec does not provide."""


class FiniteDifferenceDisabled(MissingDataError):
    pass


def _points(X, d):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != d:
        raise ValueError(f"expected points of shape (N, {d}), got {X.shape}")
    return X


def fd_first(fn, t, X, h_scale):
    """Centered differences of ``fn(t, X)`` along every axis; axis 1 is the direction."""
    X = np.asarray(X, dtype=float)
    N, d = X.shape
    h = h_scale * (1.0 + np.linalg.norm(X, axis=1))
    out = []
    for l in range(d):
        E = np.zeros_like(X)
        E[:, l] = h
        diff = np.asarray(fn(t, X + E)) - np.asarray(fn(t, X - E))
        out.append(diff / (2.0 * h).reshape((N,) + (1,) * (diff.ndim - 1)))
    return np.stack(out, axis=1)


@dataclass(frozen=True)
class OperatorSpec:
    """Coefficients of ``A = sum D_i(q_ij D_j) + sum B_i D_i + C``.

    Only ``d``, ``m``, ``Q``, ``B`` and ``C`` are mandatory. Instances are
    immutable; use :meth:`with_` to derive modified copies.
    """

    d: int
    m: int
    Q: Callable
    B: Callable
    C: Callable
    time_interval: tuple = (-math.inf, math.inf)
    dQ: Optional[Callable] = None
    dB: Optional[Callable] = None
    dC: Optional[Callable] = None
    d2Q: Optional[Callable] = None
    b: Optional[Callable] = None
    Btilde: Optional[Callable] = None
    db: Optional[Callable] = None
    dBtilde: Optional[Callable] = None
    sigma: float = 1.0
    beta: float = 0.25
    gamma: float = 0.25
    xi: Callable = lambda t: 0.0
    k_bound: Optional[Callable] = None
    kappa: Optional[Callable] = None
    hfun: Optional[Callable] = None
    holder_alpha: float = 0.5
    growth: Mapping = field(default_factory=dict)
    autonomous: bool = False
    name: str = "custom"
    params: Mapping = field(default_factory=dict)
    constraints_violated: bool = False
    constraint_notes: tuple = ()
    h_fd_scale: float = 1e-5
    allow_fd: bool = True
    tol_sym: float = TAU_SYM

    def __post_init__(self):
        if int(self.d) < 1 or int(self.m) < 1:
            raise ValueError("d and m must be positive integers")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.beta < 0.25 or self.gamma < 0.25:
            raise ValueError("beta and gamma must be >= 1/4")
        if not 0.0 < self.holder_alpha < 1.0:
            raise ValueError("holder_alpha must lie in (0, 1)")
        if (self.b is None) != (self.Btilde is None):
            raise ValueError("decomposition needs both b and Btilde")
        for key, g in self.growth.items():
            if key not in GROWTH_KEYS:
                raise ValueError(f"unknown growth key {key!r}")
            if not isinstance(g, Growth):
                raise TypeError(f"growth[{key!r}] must be a Growth")

    def with_(self, **changes):
        return replace(self, **changes)

    @property
    def has_decomposition(self):
        return self.b is not None

    def xi_at(self, t):
        v = float(self.xi(t))
        if v < 0:
            raise ValueError(f"xi(t) must be nonnegative, got {v}")
        return v

    # -- evaluation -----------------------------------------------------
    def _eval(self, name, t, X, shape, check_sym=False):
        X = _points(X, self.d)
        fn = getattr(self, name)
        val = np.asarray(fn(t, X), dtype=float)
        want = (X.shape[0],) + shape
        val = np.broadcast_to(val, want) if val.shape != want else val
        if check_sym:
            check_symmetric(val, self.tol_sym)
        return val

    def eval_Q(self, t, X, check=True):
        return self._eval("Q", t, X, (self.d, self.d), check)

    def eval_B(self, t, X, check=True):
        return self._eval("B", t, X, (self.d, self.m, self.m), check)

    def eval_C(self, t, X, check=True):
        return self._eval("C", t, X, (self.m, self.m), check)

    def eval_b(self, t, X):
        if not self.has_decomposition:
            raise MissingDataError("decomposition B_i = b_i I + Btilde_i not supplied; provide b and Btilde")
        return self._eval("b", t, X, (self.d,))

    def eval_Btilde(self, t, X):
        if not self.has_decomposition:
            raise MissingDataError("decomposition B_i = b_i I + Btilde_i not supplied; provide b and Btilde")
        return self._eval("Btilde", t, X, (self.d, self.m, self.m))

    def eval_scalar(self, name, t, X, default=None):
        fn = getattr(self, name)
        X = _points(X, self.d)
        if fn is None:
            if default is None:
                raise MissingDataError(f"scalar field {name!r} not supplied")
            return np.full(X.shape[0], float(default))
        return np.broadcast_to(np.asarray(fn(t, X), dtype=float), (X.shape[0],)).copy()

    def derivative(self, name, t, X):
        """Return ``(values, fd_used)`` for one of :data:`DERIVATIVES`."""
        if name not in DERIVATIVES:
            raise ValueError(f"unknown derivative {name!r}")
        X = _points(X, self.d)
        fn = getattr(self, name)
        if fn is not None:
            return np.asarray(fn(t, X), dtype=float), False
        if not self.allow_fd:
            raise FiniteDifferenceDisabled(f"{name} not supplied and finite differences are disabled")
        h = self.h_fd_scale
        if name == "dQ":
            return fd_first(lambda s, Y: self.eval_Q(s, Y, False), t, X, h), True
        if name == "dB":
            return fd_first(lambda s, Y: self.eval_B(s, Y, False), t, X, h), True
        if name == "dC":
            return fd_first(lambda s, Y: self.eval_C(s, Y, False), t, X, h), True
        if name == "db":
            return fd_first(self.eval_b, t, X, h), True
        if name == "dBtilde":
            return fd_first(self.eval_Btilde, t, X, h), True
        # second derivatives: difference the first derivative
        h2 = max(h, 1e-4)
        if self.dQ is not None:
            return fd_first(lambda s, Y: np.asarray(self.dQ(s, Y), dtype=float), t, X, h2), True
        inner = lambda s, Y: fd_first(lambda s2, Z: self.eval_Q(s2, Z, False), s, Y, h2)
        return fd_first(inner, t, X, h2), True

    def divB(self, t, X):
        """``sum_k D_k B_k`` of shape (N, m, m) and the fallback flag."""
        dB, fd = self.derivative("dB", t, X)
        return np.einsum("nkkab->nab", dB), fd

    def divQ(self, t, X):
        """``(sum_j D_j q_ij)_i`` of shape (N, d) and the fallback flag."""
        dQ, fd = self.derivative("dQ", t, X)
        return np.einsum("njij->ni", dQ), fd

    def decomposition_residual(self, t, X):
        B = self.eval_B(t, X, False)
        b = self.eval_b(t, X)
        Bt = self.eval_Btilde(t, X)
        R = B - b[:, :, None, None] * np.eye(self.m) - Bt
        return float(np.max(np.abs(R), initial=0.0))

    def growth_of(self, key):
        return self.growth.get(key)
