"""Masked-ball lattices and finite-difference operators on them.

Unknowns are ordered node-major: component ``a`` of node ``n`` sits at
``n * m + a``. Dirichlet operators act on interior nodes only (boundary
values are zero); Neumann operators act on every node and reflect across
missing neighbors.
"""

from dataclasses import dataclass
import math
import struct
import warnings

import numpy as np
import scipy.sparse as sp

from .coeffs.eig import eig_extremes

DEFAULT_MAX_NODES = 2_000_000
BC = ("dirichlet", "neumann")
FLAVORS = ("vector_A", "vector_A_star", "scalar_A")
_MAGIC = b"PRBFIELD"
_HEADER = struct.Struct("<8siiddq")


class PecletWarning(UserWarning):
    """Cell Péclet number above one: the centered stencil is no longer monotone."""


class GridTooLarge(ValueError):
    def __init__(self, count, budget, suggested_h):
        self.count, self.budget, self.suggested_h = count, budget, suggested_h
        super().__init__(f"grid would have about {count} nodes, above the budget of {budget}; "
                         f"try h >= {suggested_h:.4g}")


@dataclass(frozen=True, eq=False)
class Grid:
    """Lattice points of ``h Z^d`` inside the closed ball of radius ``radius``.

    Attributes
    ----------
    index : (N, d) int
        Integer lattice coordinates, in lexicographic order.
    nodes : (N, d) float
        ``h * index``.
    neighbors : (N, d, 2) int
        ``neighbors[n, i, 0]`` / ``[n, i, 1]`` is the node at ``-h e_i`` /
        ``+h e_i``, or ``-1`` when it lies outside the ball.
    interior : (N,) bool
        Nodes with all ``2d`` neighbors present.
    """

    d: int
    radius: float
    h: float
    index: np.ndarray
    nodes: np.ndarray
    neighbors: np.ndarray
    interior: np.ndarray
    _k: int
    _lookup: np.ndarray

    @property
    def N(self):
        return self.nodes.shape[0]

    @property
    def boundary(self):
        return ~self.interior

    @property
    def cell_volume(self):
        return self.h ** self.d

    def find(self, idx):
        """Node numbers for integer lattice coordinates (``-1`` when absent)."""
        idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
        off = idx + self._k
        ok = np.all((off >= 0) & (off <= 2 * self._k), axis=1)
        out = np.full(idx.shape[0], -1, dtype=np.int64)
        if np.any(ok):
            out[ok] = self._lookup[tuple(off[ok].T)]
        return out

    def ball_mask(self, radius):
        return np.linalg.norm(self.nodes, axis=1) <= radius + 1e-12

    def describe(self):
        return {"d": self.d, "radius": self.radius, "h": self.h, "nodes": int(self.N),
                "interior": int(self.interior.sum())}


def build_grid(d, radius, h, max_nodes=DEFAULT_MAX_NODES):
    """Masked lattice ``h Z^d ∩ B_radius`` with neighbor table.

    Raises
    ------
    ValueError
        ``h <= 0`` or ``radius < 4h``.
    GridTooLarge
        The node count would exceed ``max_nodes``.
    """
    if d < 1:
        raise ValueError("dimension must be positive")
    if not h > 0:
        raise ValueError("h must be positive")
    if radius < 4 * h - 1e-12:
        raise ValueError(f"radius must be at least 4h (radius={radius}, h={h})")
    k = int(math.floor(radius / h + 1e-9))
    ball = math.pi ** (d / 2) / math.gamma(d / 2 + 1) * (radius / h) ** d
    if ball > max_nodes or (2 * k + 1) ** d > 50 * max_nodes:
        suggested = h * (ball / max_nodes) ** (1.0 / d)
        raise GridTooLarge(int(ball), max_nodes, suggested)
    ax = np.arange(-k, k + 1)
    idx = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1).reshape(-1, d)
    keep = np.sum(idx.astype(float) ** 2, axis=1) * h * h <= radius * radius * (1 + 1e-12)
    idx = idx[keep]
    N = idx.shape[0]
    lookup = np.full((2 * k + 1,) * d, -1, dtype=np.int64)
    lookup[tuple((idx + k).T)] = np.arange(N)
    nb = np.full((N, d, 2), -1, dtype=np.int64)
    for i in range(d):
        for s, sgn in enumerate((-1, 1)):
            j = idx.copy()
            j[:, i] += sgn
            ok = np.abs(j[:, i]) <= k
            res = np.full(N, -1, dtype=np.int64)
            res[ok] = lookup[tuple((j[ok] + k).T)]
            nb[:, i, s] = res
    interior = np.all(nb >= 0, axis=(1, 2))
    return Grid(d=d, radius=float(radius), h=float(h), index=idx, nodes=idx * float(h), neighbors=nb,
                interior=interior, _k=k, _lookup=lookup)


# ---------------------------------------------------------------------------
# fields

def as_values(f, grid, m=None):
    """Coerce a field to a float array of shape (N, m)."""
    v = np.asarray(f.values if isinstance(f, Field) else f, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if v.shape[0] != grid.N or (m is not None and v.shape[1] != m):
        raise ValueError(f"field shape {v.shape} does not match grid with {grid.N} nodes"
                         + ("" if m is None else f" and {m} components"))
    return v


@dataclass(frozen=True, eq=False)
class Field:
    """Nodal values of an ``m``-component function on a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = as_values(self.values, self.grid)
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def m(self):
        return self.values.shape[1]

    @classmethod
    def from_function(cls, grid, fn):
        return cls(grid, fn(grid.nodes))

    def vanishes_on_boundary(self, tol=0.0):
        return bool(np.all(np.abs(self.values[self.grid.boundary]) <= tol))

    def to_csv(self, path):
        d, m = self.grid.d, self.m
        header = ",".join([f"x{i + 1}" for i in range(d)] + [f"u{a + 1}" for a in range(m)])
        data = np.concatenate([self.grid.nodes, self.values], axis=1)
        with open(path, "w") as fh:
            fh.write(f"# radius={self.grid.radius!r} h={self.grid.h!r}\n")
            np.savetxt(fh, data, delimiter=",", header=header, comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path):
        with open(path) as fh:
            meta = fh.readline()
            header = fh.readline().strip().split(",")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        kv = dict(p.split("=") for p in meta.lstrip("# ").split())
        d = sum(1 for c in header if c.startswith("x"))
        grid = build_grid(d, float(kv["radius"]), float(kv["h"]))
        if data.shape[0] != grid.N or not np.allclose(data[:, :d], grid.nodes, atol=1e-12):
            raise ValueError("CSV nodes do not match the reconstructed grid")
        return cls(grid, data[:, d:])

    def to_bytes(self):
        head = _HEADER.pack(_MAGIC, self.grid.d, self.m, self.grid.radius, self.grid.h, self.grid.N)
        return head + np.ascontiguousarray(self.values, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob):
        magic, d, m, radius, h, N = _HEADER.unpack_from(blob, 0)
        if magic != _MAGIC:
            raise ValueError("not a field dump (bad magic)")
        grid = build_grid(d, radius, h)
        if grid.N != N:
            raise ValueError(f"dump has {N} nodes, reconstructed grid has {grid.N}")
        vals = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size)
        if vals.size != N * m:
            raise ValueError("truncated field dump")
        return cls(grid, vals.reshape(N, m).copy())

    def save_binary(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load_binary(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def lp_norm(f, grid, p):
    """``(sum_nodes h^d |f|^p)^(1/p)`` with the Euclidean norm on components."""
    p = float(p)
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    v = as_values(f, grid)
    a = np.linalg.norm(v, axis=1)
    if math.isinf(p):
        return float(a.max(initial=0.0))
    mx = a.max(initial=0.0)
    if mx == 0.0:
        return 0.0
    return float(mx * (grid.cell_volume * np.sum((a / mx) ** p)) ** (1.0 / p))


def sup_norm(f, grid):
    return lp_norm(f, grid, math.inf)


def inner(f, g, grid):
    """Grid pairing ``h^d sum <f, g>``."""
    return float(grid.cell_volume * np.sum(as_values(f, grid) * as_values(g, grid)))


def discrete_gradient(f, grid):
    """Nodal gradient of shape (N, d, m).

    Centered where both neighbors exist, one-sided where one is missing,
    zero where both are.
    """
    v = as_values(f, grid)
    N, m = v.shape
    G = np.zeros((N, grid.d, m))
    h = grid.h
    for i in range(grid.d):
        lo, hi = grid.neighbors[:, i, 0], grid.neighbors[:, i, 1]
        both = (lo >= 0) & (hi >= 0)
        G[both, i] = (v[hi[both]] - v[lo[both]]) / (2 * h)
        only_hi = (lo < 0) & (hi >= 0)
        G[only_hi, i] = (v[hi[only_hi]] - v[only_hi]) / h
        only_lo = (lo >= 0) & (hi < 0)
        G[only_lo, i] = (v[only_lo] - v[lo[only_lo]]) / h
    return G


# ---------------------------------------------------------------------------
# operators

@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Sparse action of the operator at a fixed time.

    ``matrix`` acts on the unknown vector; :meth:`apply` acts on full
    nodal arrays and returns zeros at non-unknown nodes.
    """

    matrix: sp.csr_matrix
    grid: Grid
    bc: str
    flavor: str
    t: float
    m: int
    unknowns: np.ndarray
    peclet: float
    upwind: bool = False
    fd_used: bool = False

    @property
    def size(self):
        return self.matrix.shape[0]

    def restrict(self, values):
        v = as_values(values, self.grid, self.m)
        return v[self.unknowns].reshape(-1).copy()

    def extend(self, vec):
        out = np.zeros((self.grid.N, self.m))
        out[self.unknowns] = np.asarray(vec).reshape(-1, self.m)
        return out

    def apply(self, values):
        return self.extend(self.matrix @ self.restrict(values))

    def dense(self):
        return self.matrix.toarray()


def _block_coo(rows, cols, blocks, m):
    """Expand node-level (K,) rows/cols and (K, m, m) blocks into entry-level COO triplets."""
    a = np.arange(m)
    R = (rows[:, None, None] * m + a[None, :, None]) + np.zeros((1, 1, m), dtype=np.int64)
    Cc = (cols[:, None, None] * m + a[None, None, :]) + np.zeros((1, m, 1), dtype=np.int64)
    return R.reshape(-1), Cc.reshape(-1), np.asarray(blocks).reshape(-1)


def _centered_matrix(grid, i, bc):
    """``(u(x+he_i) - u(x-he_i)) / 2h`` on the full node set."""
    nb = grid.neighbors[:, i]
    n = np.arange(grid.N)
    if bc == "dirichlet":
        okp, okm = nb[:, 1] >= 0, nb[:, 0] >= 0
    else:
        okp = okm = (nb[:, 1] >= 0) & (nb[:, 0] >= 0)
    rows = np.concatenate([n[okp], n[okm]])
    cols = np.concatenate([nb[okp, 1], nb[okm, 0]])
    vals = np.concatenate([np.full(okp.sum(), 0.5 / grid.h), np.full(okm.sum(), -0.5 / grid.h)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(grid.N, grid.N))


def diffusion_matrix(spec, t, grid, bc):
    """Scalar stencil for ``sum_ij D_i(q_ij D_j u)`` on the full node set."""
    X = grid.nodes
    h = grid.h
    N, d = grid.N, grid.d
    n = np.arange(N)
    rows, cols, vals = [], [], []
    for i in range(d):
        e = np.zeros(d)
        e[i] = 0.5 * h
        qp = spec.eval_Q(t, X + e)[:, i, i]
        qm = spec.eval_Q(t, X - e)[:, i, i]
        hi, lo = grid.neighbors[:, i, 1], grid.neighbors[:, i, 0]
        has_hi, has_lo = hi >= 0, lo >= 0
        cp = np.where(has_hi, qp, 0.0) / h ** 2
        cm = np.where(has_lo, qm, 0.0) / h ** 2
        if bc == "neumann":
            # mirror ghost: the missing neighbor takes the value across the node
            cp, cm = (np.where(has_hi, cp, np.where(has_lo, cm, 0.0)),
                      np.where(has_lo, cm, np.where(has_hi, cp, 0.0)))
            tgt_hi = np.where(has_hi, hi, lo)
            tgt_lo = np.where(has_lo, lo, hi)
        else:
            tgt_hi, tgt_lo = hi, lo
        for c, tgt in ((cp, tgt_hi), (cm, tgt_lo)):
            ok = (c != 0.0) & (tgt >= 0)
            rows += [n[ok], n[ok]]
            cols += [tgt[ok], n[ok]]
            vals += [c[ok], -c[ok]]
    L = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))
    Qn = spec.eval_Q(t, X)
    if d > 1 and np.any(Qn[:, ~np.eye(d, dtype=bool)] != 0.0):
        Dc = [_centered_matrix(grid, i, bc) for i in range(d)]
        for i in range(d):
            for j in range(d):
                if i != j:
                    L = L + Dc[i] @ sp.diags(Qn[:, i, j]) @ Dc[j]
    return L.tocsr()


def _drift_triplets(grid, coef, bc, centered=True):
    """Node-level triplets for ``sum_i coef_i D_i`` (coef: (N, d, ...)); returns rows, cols, blocks."""
    h = grid.h
    n = np.arange(grid.N)
    R, Cc, V = [], [], []
    for i in range(grid.d):
        hi, lo = grid.neighbors[:, i, 1], grid.neighbors[:, i, 0]
        both = (hi >= 0) & (lo >= 0)
        if bc == "dirichlet":
            okp, okm = hi >= 0, lo >= 0
        else:
            okp = okm = both
        c = coef[:, i]
        R += [n[okp], n[okm]]
        Cc += [hi[okp], lo[okm]]
        V += [c[okp] / (2 * h), -c[okm] / (2 * h)]
    return np.concatenate(R), np.concatenate(Cc), np.concatenate(V)


def _upwind_scalar(grid, b, bc):
    """First-order upwind ``sum_i b_i D_i`` with mirror values at missing neighbors."""
    h = grid.h
    n = np.arange(grid.N)
    rows, cols, vals = [], [], []
    for i in range(grid.d):
        hi, lo = grid.neighbors[:, i, 1], grid.neighbors[:, i, 0]
        bi = b[:, i]
        fwd = bi > 0
        tgt = np.where(fwd, hi, lo)
        alt = np.where(fwd, lo, hi)
        if bc == "neumann":
            tgt = np.where(tgt >= 0, tgt, alt)
        ok = (tgt >= 0) & (bi != 0)
        c = np.abs(bi) / h
        rows += [n[ok], n[ok]]
        cols += [tgt[ok], n[ok]]
        vals += [c[ok], -c[ok]]
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(grid.N, grid.N))


def _peclet(spec, t, grid, drift_norm):
    Q = spec.eval_Q(t, grid.nodes)
    qii = np.diagonal(Q, axis1=1, axis2=2)
    return float(np.max(drift_norm * grid.h / (2.0 * qii), initial=0.0))


def assemble(spec, t, grid, bc="dirichlet", flavor="vector_A", upwind=False, warn=True):
    """Assemble the operator at time ``t``.

    Parameters
    ----------
    bc : {"dirichlet", "neumann"}
    flavor : {"vector_A", "vector_A_star", "scalar_A"}
        ``vector_A`` is the system operator, ``vector_A_star`` its formal
        adjoint (conservative drift, Dirichlet only), ``scalar_A`` the
        scalar comparison operator built from the drift's scalar part.
    upwind : bool
        Upwind the scalar drift part ``b`` (needs the decomposition); the
        matrix remainder stays centered.
    """
    if bc not in BC:
        raise ValueError(f"bc must be one of {BC}")
    if flavor not in FLAVORS:
        raise ValueError(f"flavor must be one of {FLAVORS}")
    if flavor == "vector_A_star":
        if bc != "dirichlet":
            raise ValueError("the adjoint operator is only provided with Dirichlet conditions")
        A = assemble(spec, t, grid, bc, "vector_A", upwind, warn)
        return DiscreteOperator(A.matrix.T.tocsr(), grid, bc, flavor, t, A.m, A.unknowns, A.peclet, upwind)
    X = grid.nodes
    L = diffusion_matrix(spec, t, grid, bc)
    if flavor == "scalar_A":
        b = spec.eval_b(t, X)
        if upwind:
            Dr = _upwind_scalar(grid, b, bc)
            pe = 0.0
        else:
            r, c, v = _drift_triplets(grid, b, bc)
            Dr = sp.csr_matrix((v, (r, c)), shape=(grid.N, grid.N))
            pe = _peclet(spec, t, grid, np.abs(b))
        M = (L + Dr).tocsr()
        m = 1
    else:
        m = spec.m
        B = spec.eval_B(t, X)
        if upwind:
            b = spec.eval_b(t, X)
            Bt = spec.eval_Btilde(t, X)
            Dscal = sp.kron(_upwind_scalar(grid, b, bc), sp.identity(m))
            r, c, v = _drift_triplets(grid, Bt, bc)
            norm = _spectral_norms(Bt)
        else:
            Dscal = None
            r, c, v = _drift_triplets(grid, B, bc)
            norm = _spectral_norms(B)
        rr, cc, vv = _block_coo(r, c, v, m)
        Dr = sp.csr_matrix((vv, (rr, cc)), shape=(grid.N * m, grid.N * m))
        if Dscal is not None:
            Dr = Dr + Dscal
        Cn = spec.eval_C(t, X)
        n = np.arange(grid.N)
        rr, cc, vv = _block_coo(n, n, Cn, m)
        P = sp.csr_matrix((vv, (rr, cc)), shape=(grid.N * m, grid.N * m))
        M = (sp.kron(L, sp.identity(m)) + Dr + P).tocsr()
        pe = _peclet(spec, t, grid, norm)
    if warn and pe > 1.0:
        warnings.warn(f"cell Peclet number {pe:.3g} > 1 at t={t}: centered drift is not monotone; "
                      "refine h or enable upwinding", PecletWarning, stacklevel=2)
    unknowns = np.flatnonzero(grid.interior) if bc == "dirichlet" else np.arange(grid.N)
    if bc == "dirichlet":
        sel = (unknowns[:, None] * m + np.arange(m)[None, :]).reshape(-1)
        M = M[sel][:, sel].tocsr()
    M.eliminate_zeros()
    return DiscreteOperator(M, grid, bc, flavor, float(t), m, unknowns, pe, upwind)


def _spectral_norms(B):
    """``max_i |B_i|_2`` per node for (N, d, m, m) symmetric blocks -> (N, d)."""
    lo, hi = eig_extremes(B)
    return np.maximum(np.abs(lo), np.abs(hi))
