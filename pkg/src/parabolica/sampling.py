"""Deterministic space-time sample plans and unit-sphere discretizations.

Plans are nested in the box radius: the lattice spacing and the ray radii
do not depend on the box, so every sample of a smaller box is also a
sample of any larger one.
"""

from dataclasses import dataclass
import itertools
import math

import numpy as np
from scipy.optimize import minimize

from .coeffs.spec import TAU_UNIT

RAY_RADII = tuple(0.25 * 2.0 ** (k / 4.0) for k in range(0, 60))


@dataclass(frozen=True)
class SamplePlan:
    """Space-time sample layout.

    Parameters
    ----------
    box : float
        Radius of the sampled ball.
    spacing : float
        Lattice spacing (independent of ``box`` so plans nest).
    n_times : int
        Time samples per interval (1 for autonomous specs).
    refine : bool
        Polish the sampled extremum with a local optimizer.
    seed : int
        Seed for quasi-random sphere points (m > 3).
    """

    box: float = 8.0
    spacing: float = 0.25
    n_times: int = 3
    refine: bool = True
    seed: int = 0
    max_points: int = 200_000

    def __post_init__(self):
        if self.box <= 0 or self.spacing <= 0:
            raise ValueError("box and spacing must be positive")
        if self.n_times < 1:
            raise ValueError("n_times must be >= 1")

    def points(self, d):
        k = int(math.floor(self.box / self.spacing + 1e-9))
        if (2 * k + 1) ** d > 20 * self.max_points:
            raise ValueError("sample lattice too large; increase spacing or reduce box")
        ax = np.arange(-k, k + 1) * self.spacing
        L = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1).reshape(-1, d)
        L = L[np.linalg.norm(L, axis=1) <= self.box + 1e-12]
        dirs = _ray_directions(d)
        radii = np.array([r for r in RAY_RADII if r <= self.box + 1e-12])
        R = (radii[:, None, None] * dirs[None, :, :]).reshape(-1, d)
        P = np.concatenate([L, R], axis=0)
        if P.shape[0] > self.max_points:
            raise ValueError(f"{P.shape[0]} sample points exceed max_points={self.max_points}")
        return P

    def times(self, J, autonomous=False):
        t0, t1 = float(J[0]), float(J[1])
        if autonomous or self.n_times == 1 or t1 == t0:
            return np.array([t0])
        return np.linspace(t0, t1, self.n_times)


def _ray_directions(d):
    dirs = []
    for signs in itertools.product((-1.0, 0.0, 1.0), repeat=d):
        v = np.array(signs)
        if np.any(v):
            dirs.append(v / np.linalg.norm(v))
    return np.array(dirs)


@dataclass(frozen=True)
class SphereSample:
    directions: np.ndarray
    scheme: str

    def __post_init__(self):
        n = np.linalg.norm(self.directions, axis=1)
        if np.any(np.abs(n - 1.0) > TAU_UNIT):
            raise ValueError("sphere directions must be unit vectors")

    @property
    def m(self):
        return self.directions.shape[1]

    def antipodal_closure(self):
        D = self.directions
        keys = {tuple(np.round(v, 12)) for v in D}
        extra = [-v for v in D if tuple(np.round(-v, 12)) not in keys]
        if not extra:
            return self
        return SphereSample(np.concatenate([D, np.array(extra)]), self.scheme)


def _normalize(V):
    return V / np.linalg.norm(V, axis=1, keepdims=True)


def sphere_sample(m, seed=0, n=None):
    """Unit directions in R^m, closed under ``eta -> -eta``.

    m=1: {+1, -1}; m=2: equispaced angles (720); m=3: Fibonacci lattice
    plus antipodes (1000); m>3: seeded Gaussian points plus antipodes (2000).
    """
    if m == 1:
        return SphereSample(np.array([[1.0], [-1.0]]), "pair")
    if m == 2:
        k = n or 720
        th = 2.0 * np.pi * np.arange(k) / k
        return SphereSample(np.stack([np.cos(th), np.sin(th)], axis=1), "full_circle")
    if m == 3:
        k = (n or 1000) // 2
        i = np.arange(k) + 0.5
        z = 1.0 - 2.0 * i / k
        rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        phi = np.pi * (1.0 + 5.0 ** 0.5) * i
        V = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
        V = _normalize(V)
        return SphereSample(np.concatenate([V, -V]), "fibonacci")
    rng = np.random.default_rng(seed)
    V = _normalize(rng.standard_normal(((n or 2000) // 2, m)))
    return SphereSample(np.concatenate([V, -V]), "random_refined")


def refine_direction(fn, eta0, mode="min", iters=200):
    """Polish a direction extremum of ``fn(eta)`` on the unit sphere."""
    sign = 1.0 if mode == "min" else -1.0

    def obj(v):
        n = np.linalg.norm(v)
        return sign * fn(v / n) if n > 0 else np.inf

    res = minimize(obj, np.asarray(eta0, float), method="Nelder-Mead",
                   options={"maxiter": iters, "xatol": 1e-10, "fatol": 1e-14})
    v = res.x / np.linalg.norm(res.x)
    return v, sign * res.fun


def sampled_extremum(fn, spec, J, plan, mode="max", refine=None):
    """Extremum of a vectorized ``fn(t, X) -> (N,)`` over the plan.

    Returns
    -------
    dict
        ``value`` (after optional polishing), ``sampled_value`` (lattice
        only), ``argext`` as ``(t, x)`` and its lattice counterpart
        ``sampled_argext``, ``samples`` and ``inner_value``
        (the extremum restricted to the half-radius box).
    """
    X = plan.points(spec.d)
    inner = np.linalg.norm(X, axis=1) <= 0.5 * plan.box + 1e-12
    best, arg, inner_best = None, None, None
    sign = 1.0 if mode == "max" else -1.0
    times = plan.times(J, spec.autonomous)
    for t in times:
        v = np.asarray(fn(t, X), dtype=float)
        i = int(np.argmax(sign * v))
        if best is None or sign * v[i] > sign * best:
            best, arg = float(v[i]), (float(t), X[i].copy())
        ib = float(np.max(sign * v[inner])) * sign
        if inner_best is None or sign * ib > sign * inner_best:
            inner_best = ib
    sampled, sampled_arg = best, arg
    refine = plan.refine if refine is None else refine
    if refine:
        t, x0 = arg
        val, x = refine_point(lambda Y: fn(t, Y), x0, plan.box, mode)
        if sign * val > sign * best:
            best, arg = val, (t, x)
    return {"value": best, "sampled_value": sampled, "argext": arg, "sampled_argext": sampled_arg,
            "samples": int(X.shape[0] * len(times)), "inner_value": inner_best}


def refine_point(fn, x0, box, mode="max"):
    """Local polish of a sampled extremum, kept inside the closed ball."""
    sign = 1.0 if mode == "max" else -1.0
    x0 = np.asarray(x0, dtype=float)

    def obj(y):
        y = _clip_ball(y, box)
        return -sign * float(np.asarray(fn(y[None, :]))[0])

    res = minimize(obj, x0, method="Nelder-Mead",
                   options={"maxiter": 400, "xatol": 1e-10, "fatol": 1e-14})
    y = _clip_ball(res.x, box)
    return -sign * obj(y), y


def _clip_ball(y, box):
    n = np.linalg.norm(y)
    return y if n <= box else y * (box / n)
