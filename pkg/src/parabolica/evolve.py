"""θ-scheme time integration of the discrete operators.

Each step solves ``(I - θ dt A(t1)) u+ = (I + (1-θ) dt A(t0)) u``. The
backward (adjoint) integrator uses the exact transpose of the forward
step, so the grid duality pairing is preserved to solver accuracy.
"""

from dataclasses import asdict, dataclass, field
import hashlib
import json
import math
import os
import warnings

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Field, PecletWarning, as_values, assemble, inner, lp_norm, sup_norm

SOLVERS = ("direct", "cg", "bicgstab", "gmres")


class SolverError(RuntimeError):
    """Linear solve failed to reach the requested relative residual."""

    def __init__(self, message, history):
        self.history = list(history)
        super().__init__(f"{message}; residual history tail: {self.history[-5:]}")


@dataclass(frozen=True)
class EvolutionConfig:
    """Time-stepping parameters.

    ``dt`` is an upper bound: each run uses ``(t - s) / ceil((t - s) / dt)``.
    """

    theta: float = 1.0
    dt: float = 1e-2
    solver_tol: float = 1e-10
    max_iters: int = 2000
    solver: str = "direct"
    upwind: bool = False

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.solver_tol > 0:
            raise ValueError("solver_tol must be positive")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}")

    def steps(self, s, t):
        span = abs(t - s)
        if span == 0:
            return 0, 0.0
        n = max(1, int(math.ceil(span / self.dt - 1e-9)))
        return n, span / n


def spec_hash(spec):
    payload = json.dumps({"name": spec.name, "d": spec.d, "m": spec.m,
                          "params": {k: repr(v) for k, v in sorted((spec.params or {}).items())}},
                         sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass
class Trajectory:
    """Snapshots of a discrete evolution.

    ``times`` follow the direction of integration (increasing for
    ``forward``, decreasing for ``backward``); the first snapshot is the datum.
    """

    grid: object
    times: list
    values: list
    direction: str = "forward"
    provenance: dict = field(default_factory=dict)

    @property
    def final(self):
        return Field(self.grid, self.values[-1])

    def __len__(self):
        return len(self.times)

    def export(self, directory):
        """Write ``manifest.json`` and one binary dump per snapshot."""
        os.makedirs(directory, exist_ok=True)
        files = []
        for k, v in enumerate(self.values):
            name = f"snapshot_{k:05d}.bin"
            Field(self.grid, v).save_binary(os.path.join(directory, name))
            files.append(name)
        manifest = {"direction": self.direction, "times": [float(t) for t in self.times],
                    "files": files, "grid": self.grid.describe(), "provenance": self.provenance}
        tmp = os.path.join(directory, "manifest.json.tmp")
        with open(tmp, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        os.replace(tmp, os.path.join(directory, "manifest.json"))
        return manifest


class _Solver:
    """Factor-once solver for ``M x = b`` with a residual contract."""

    def __init__(self, M, config, transpose=False):
        self.M = (M.T if transpose else M).tocsc()
        self.config = config
        self._lu = None

    def solve(self, b):
        cfg = self.config
        b = np.asarray(b, dtype=float)
        if not np.any(b):
            return np.zeros_like(b)
        if cfg.solver == "direct":
            if self._lu is None:
                self._lu = spla.splu(self.M)
            x = self._lu.solve(b)
            res = _relres(self.M, x, b)
            if res > cfg.solver_tol:
                x = x + self._lu.solve(b - self.M @ x)
                res = _relres(self.M, x, b)
                if res > cfg.solver_tol:
                    raise SolverError("direct solve residual above tolerance", [res])
            return x
        if b.ndim == 2:
            return np.stack([self.solve(b[:, j]) for j in range(b.shape[1])], axis=1)
        history = []
        if self._lu is None:
            try:
                self._lu = spla.spilu(self.M, drop_tol=1e-5, fill_factor=10)
            except RuntimeError:
                self._lu = False
        P = None if self._lu is False else spla.LinearOperator(self.M.shape, self._lu.solve)
        nb = np.linalg.norm(b)

        def cb(xk):
            history.append(float(np.linalg.norm(b - self.M @ xk) / nb))

        kw = dict(rtol=cfg.solver_tol * 0.1, atol=0.0, maxiter=cfg.max_iters, M=P)
        if cfg.solver == "cg":
            x, info = spla.cg(self.M, b, callback=cb, **kw)
        elif cfg.solver == "bicgstab":
            x, info = spla.bicgstab(self.M, b, callback=cb, **kw)
        else:
            x, info = spla.gmres(self.M, b, callback=lambda xk: cb(xk), callback_type="x", restart=50, **kw)
        res = _relres(self.M, x, b)
        if info != 0 or res > cfg.solver_tol:
            raise SolverError(f"{cfg.solver} did not converge (info={info}, residual={res:.3g})",
                              history or [res])
        return x


def _relres(M, x, b):
    nb = np.linalg.norm(b)
    return float(np.linalg.norm(M @ x - b) / nb) if nb > 0 else 0.0


def _id(n):
    return sp.identity(n, format="csr")


def step(op0, op1, u, dt, theta=1.0, config=None):
    """One θ-step from ``op0.t`` to ``op1.t``.

    ``u`` may be a :class:`~parabolica.mesh.Field` (returns a Field) or an
    unknown vector (returns a vector).
    """
    config = config or EvolutionConfig(theta=theta, dt=dt)
    if op0.grid is not op1.grid or op0.bc != op1.bc or op0.m != op1.m:
        raise ValueError("operators must share grid, boundary condition and components")
    as_field = isinstance(u, Field)
    vec = op0.restrict(u) if as_field else np.asarray(u, dtype=float)
    n = op0.size
    rhs = vec + (1.0 - theta) * dt * (op0.matrix @ vec) if theta < 1.0 else vec
    if theta > 0.0:
        out = _Solver(_id(n) - theta * dt * op1.matrix, config).solve(rhs)
    else:
        out = rhs
    return Field(op0.grid, op0.extend(out)) if as_field else out


class _Propagator:
    """Assembles and caches step operators along a fixed time grid."""

    def __init__(self, spec, grid, bc, flavor, config):
        self.spec, self.grid, self.bc, self.flavor, self.config = spec, grid, bc, flavor, config
        self._ops = {}
        self._solvers = {}

    def op(self, t):
        key = 0.0 if self.spec.autonomous else round(float(t), 12)
        if key not in self._ops:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", PecletWarning)
                A = assemble(self.spec, t, self.grid, self.bc, self.flavor, upwind=self.config.upwind)
            for w in caught:
                if issubclass(w.category, PecletWarning) and self.config.theta != 1.0:
                    raise ValueError(f"{w.message}; theta=1 is required while the Peclet warning is active")
                warnings.warn(w.message, w.category, stacklevel=4)
            self._ops[key] = A
        return self._ops[key]

    def solver(self, t1, dt, transpose=False):
        key = (0.0 if self.spec.autonomous else round(float(t1), 12), round(dt, 15), transpose)
        if key not in self._solvers:
            A = self.op(t1)
            M = _id(A.size) - self.config.theta * dt * A.matrix
            self._solvers[key] = _Solver(M, self.config, transpose=transpose)
        return self._solvers[key]

    def forward(self, vec, t0, t1):
        th, dt = self.config.theta, t1 - t0
        if th < 1.0:
            vec = vec + (1.0 - th) * dt * (self.op(t0).matrix @ vec)
        return self.solver(t1, dt).solve(vec) if th > 0.0 else vec

    def backward(self, vec, t0, t1):
        """Transpose of :meth:`forward` applied to ``vec``."""
        th, dt = self.config.theta, t1 - t0
        w = self.solver(t1, dt, transpose=True).solve(vec) if th > 0.0 else vec
        if th < 1.0:
            w = w + (1.0 - th) * dt * (self.op(t0).matrix.T @ w)
        return w


def _time_grid(s, t, config):
    n, dt = config.steps(s, t)
    return [s + k * dt for k in range(n)] + [t] if n else [s]


def _check_datum(grid, bc, f, m):
    v = as_values(f, grid, m)
    if not np.all(np.isfinite(v)):
        raise ValueError("initial datum must be finite")
    if bc == "dirichlet":
        scale = max(1.0, float(np.abs(v).max(initial=0.0)))
        if np.any(np.abs(v[grid.boundary]) > 1e-14 * scale):
            raise ValueError("Dirichlet evolution requires a datum vanishing on the boundary nodes")
    return v


def _components(spec, flavor):
    return 1 if flavor == "scalar_A" else spec.m


def _provenance(spec, grid, config, **extra):
    out = {"spec": spec.name, "spec_hash": spec_hash(spec), "grid": grid.describe(), "config": asdict(config)}
    out.update(extra)
    return out


def evolve(spec, grid, bc, flavor, f, s, t, config=None, store="all"):
    """Forward evolution ``G_n(t, s) f``.

    Parameters
    ----------
    store : {"all", "final"}
        Keep every step or only the datum and the final state.
    """
    config = config or EvolutionConfig()
    if t < s:
        raise ValueError(f"need s <= t, got s={s}, t={t}")
    if flavor == "vector_A_star":
        raise ValueError("use evolve_adjoint for the adjoint flavor")
    m = _components(spec, flavor)
    v = _check_datum(grid, bc, f, m)
    prop = _Propagator(spec, grid, bc, flavor, config)
    times = _time_grid(s, t, config)
    if len(times) == 1:
        return Trajectory(grid, [float(s)], [v.copy()], "forward", _provenance(spec, grid, config, bc=bc))
    A0 = prop.op(s)
    vec = A0.restrict(v)
    tr_t, tr_v = [float(s)], [v.copy()]
    for k in range(len(times) - 1):
        vec = prop.forward(vec, times[k], times[k + 1])
        if store == "all" or k == len(times) - 2:
            tr_t.append(float(times[k + 1]))
            tr_v.append(A0.extend(vec))
    return Trajectory(grid, tr_t, tr_v, "forward", _provenance(spec, grid, config, bc=bc, flavor=flavor))


def evolve_adjoint(spec, grid, g, t, s, config=None, store="all"):
    """Backward evolution ``G*_n(t, s) g`` from time ``t`` down to ``s`` (Dirichlet only).

    The step is the exact transpose of the forward step, so
    ``<G f, g> = <f, G* g>`` on the grid.
    """
    config = config or EvolutionConfig()
    if t < s:
        raise ValueError(f"need s <= t, got s={s}, t={t}")
    v = _check_datum(grid, "dirichlet", g, spec.m)
    prop = _Propagator(spec, grid, "dirichlet", "vector_A", config)
    times = _time_grid(s, t, config)
    if len(times) == 1:
        return Trajectory(grid, [float(t)], [v.copy()], "backward", _provenance(spec, grid, config))
    A0 = prop.op(t)
    vec = A0.restrict(v)
    tr_t, tr_v = [float(t)], [v.copy()]
    for k in range(len(times) - 1, 0, -1):
        vec = prop.backward(vec, times[k - 1], times[k])
        if store == "all" or k == 1:
            tr_t.append(float(times[k - 1]))
            tr_v.append(A0.extend(vec))
    return Trajectory(grid, tr_t, tr_v, "backward", _provenance(spec, grid, config, bc="dirichlet",
                                                               flavor="vector_A_star"))


def propagator_matrix(spec, grid, bc, flavor, s, t, config=None):
    """Dense matrix of ``G_n(t, s)`` on the unknowns (small grids only)."""
    config = config or EvolutionConfig()
    prop = _Propagator(spec, grid, bc, flavor, config)
    n = prop.op(s).size
    if n > 4000:
        raise ValueError(f"dense propagator with {n} unknowns is too large")
    P = np.eye(n)
    times = _time_grid(s, t, config)
    for k in range(len(times) - 1):
        P = prop.forward(P, times[k], times[k + 1])
    return P, prop.op(s)


def evolution_law_residual(spec, grid, bc, flavor, f, s, r, t, config=None):
    """``|| G(t,s) f - G(t,r) G(r,s) f ||`` in the grid L² norm."""
    config = config or EvolutionConfig()
    if not s < r < t:
        raise ValueError(f"need s < r < t, got s={s}, r={r}, t={t}")
    full = evolve(spec, grid, bc, flavor, f, s, t, config, store="final").values[-1]
    mid = evolve(spec, grid, bc, flavor, f, s, r, config, store="final").values[-1]
    two = evolve(spec, grid, bc, flavor, mid, r, t, config, store="final").values[-1]
    return lp_norm(full - two, grid, 2)


def duhamel_residual(spec, grid, bc, flavor, f, s, t, config=None):
    """Sup norm of ``G(t,s) f - f - int_s^t G(t,r) A(r) f dr``.

    The integral is a composite trapezoid rule over the step times, summed
    Horner-style so each step costs one solve.
    """
    config = config or EvolutionConfig()
    m = _components(spec, flavor)
    v = as_values(f, grid, m)
    if bc == "dirichlet":
        ring = grid.boundary.copy()
        nb = grid.neighbors[grid.boundary].reshape(-1)
        ring[nb[nb >= 0]] = True
        if np.any(np.abs(v[ring]) > 1e-14 * max(1.0, float(np.abs(v).max(initial=0.0)))):
            warnings.warn("datum does not vanish near the boundary; the Duhamel identity assumes compact support",
                          RuntimeWarning, stacklevel=2)
        v = v.copy()
        v[grid.boundary] = 0.0
    if t == s:
        return 0.0
    prop = _Propagator(spec, grid, bc, flavor, config)
    times = _time_grid(s, t, config)
    n = len(times) - 1
    dt = times[1] - times[0]
    A0 = prop.op(s)
    fvec = A0.restrict(v)
    Gf = fvec.copy()
    w0 = 0.5 * dt
    Z = w0 * (prop.op(times[0]).matrix @ fvec)
    for k in range(n):
        Gf = prop.forward(Gf, times[k], times[k + 1])
        wk = 0.5 * dt if k + 1 == n else dt
        Z = prop.forward(Z, times[k], times[k + 1]) + wk * (prop.op(times[k + 1]).matrix @ fvec)
    res = A0.extend(Gf - fvec - Z)
    return sup_norm(res, grid)


def pairing_gap(spec, grid, f, g, s, t, config=None):
    """``(|<G f, g> - <f, G* g>|, scale)`` on the grid."""
    config = config or EvolutionConfig()
    Gf = evolve(spec, grid, "dirichlet", "vector_A", f, s, t, config, store="final").values[-1]
    Gg = evolve_adjoint(spec, grid, g, t, s, config, store="final").values[-1]
    a, b = inner(Gf, g, grid), inner(f, Gg, grid)
    scale = max(1.0, abs(a), abs(b))
    return abs(a - b), scale
