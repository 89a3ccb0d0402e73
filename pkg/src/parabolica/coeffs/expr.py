"""A small expression grammar for coefficient fields.

Scalars use ``+ - * / ^``, parentheses, numeric constants, ``t``,
``x1 .. xd``, ``r2`` (``|x|^2``), ``r`` (``|x|``) and ``exp``. Matrices are
written row by row with ``;`` between rows and ``,`` between entries, e.g.
``"1 + r2, 0; 0, 2"``. A lone scalar stands for that scalar times the
identity. Parsing and exact differentiation are delegated to sympy.
"""

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import convert_xor, parse_expr, standard_transformations

_TRANSFORMS = standard_transformations + (convert_xor,)


class ExpressionError(ValueError):
    pass


def _symbols(d):
    xs = sp.symbols(" ".join(f"x{i + 1}" for i in range(d)), real=True)
    if d == 1:
        xs = (xs,) if not isinstance(xs, tuple) else xs
    return sp.Symbol("t", real=True), tuple(xs)


def parse_scalar(text, d):
    """Parse one scalar expression into a sympy expression in ``t, x1..xd``."""
    t, xs = _symbols(d)
    r2 = sum(x ** 2 for x in xs)
    local = {"t": t, "r2": r2, "r": sp.sqrt(r2), "exp": sp.exp, "sqrt": sp.sqrt}
    local.update({f"x{i + 1}": x for i, x in enumerate(xs)})
    text = str(text).strip()
    if not text:
        raise ExpressionError("empty expression")
    try:
        e = parse_expr(text, local_dict=local, global_dict={"Integer": sp.Integer, "Float": sp.Float,
                                                             "Rational": sp.Rational, "Symbol": sp.Symbol},
                       transformations=_TRANSFORMS, evaluate=True)
    except Exception as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc}") from None
    e = sp.sympify(e)
    allowed = {t, *xs}
    stray = e.free_symbols - allowed
    if stray:
        raise ExpressionError(f"unknown symbols {sorted(map(str, stray))} in {text!r}")
    for f in e.atoms(sp.Function):
        if f.func not in (sp.exp,):
            raise ExpressionError(f"function {f.func} not allowed in {text!r}")
    return e


def parse_matrix(text, d, size):
    """Parse ``"a, b; c, d"`` (or a scalar meaning scalar * I) into a sympy Matrix."""
    rows = [r for r in str(text).split(";")]
    if len(rows) == 1 and "," not in rows[0]:
        return parse_scalar(rows[0], d) * sp.eye(size)
    entries = [[parse_scalar(c, d) for c in r.split(",")] for r in rows]
    if len(entries) != size or any(len(r) != size for r in entries):
        raise ExpressionError(f"matrix {text!r} is not {size}x{size}")
    return sp.Matrix(entries)


class Field:
    """A scalar or matrix field with exact first and second spatial derivatives.

    Calling ``field.value(t, X)`` returns shape ``(N,) + shape``;
    ``field.grad(t, X)`` returns ``(N, d) + shape``; ``field.hess`` returns
    ``(N, d, d) + shape``.
    """

    def __init__(self, expr, d):
        self.d = d
        self.t, self.xs = _symbols(d)
        self.expr = sp.Matrix(expr) if isinstance(expr, (sp.MatrixBase, list)) else sp.Matrix([[expr]])
        self.is_scalar = not isinstance(expr, (sp.MatrixBase, list))
        self.shape = () if self.is_scalar else tuple(self.expr.shape)
        self._value = self._compile(self.expr)
        self._grad = None
        self._hess = None

    def _compile(self, M):
        f = sp.lambdify((self.t, *self.xs), list(M), modules="numpy")
        shape = tuple(M.shape)

        def call(t, X):
            X = np.atleast_2d(np.asarray(X, dtype=float))
            vals = f(t, *X.T)
            N = X.shape[0]
            out = np.stack([np.broadcast_to(np.asarray(v, dtype=float), (N,)) for v in vals], axis=-1)
            return out.reshape((N,) + shape)

        return call

    def _unflatten(self, out, N):
        return out.reshape((N,) + out.shape[1:-2]) if self.is_scalar else out

    def value(self, t, X):
        out = self._value(t, X)
        return out[:, 0, 0] if self.is_scalar else out

    def _diff_matrix(self, order):
        M = self.expr
        blocks = []
        if order == 1:
            for x in self.xs:
                blocks.append(M.diff(x))
        else:
            for x in self.xs:
                for y in self.xs:
                    blocks.append(M.diff(x).diff(y))
        return sp.Matrix.vstack(*blocks)

    def grad(self, t, X):
        if self._grad is None:
            self._grad = self._compile(self._diff_matrix(1))
        out = self._grad(t, X)
        N = out.shape[0]
        r, c = self.expr.shape
        out = out.reshape(N, self.d, r, c)
        return out[:, :, 0, 0] if self.is_scalar else out

    def hess(self, t, X):
        if self._hess is None:
            self._hess = self._compile(self._diff_matrix(2))
        out = self._hess(t, X)
        N = out.shape[0]
        r, c = self.expr.shape
        out = out.reshape(N, self.d, self.d, r, c)
        return out[:, :, :, 0, 0] if self.is_scalar else out

    def depends_on_time(self):
        return self.t in self.expr.free_symbols


def scalar_field(text, d):
    return Field(parse_scalar(text, d), d)


def matrix_field(text, d, size):
    return Field(parse_matrix(text, d, size), d)


def stacked(fields):
    """Combine per-index matrix fields ``B_1..B_d`` into (N, d, m, m) callables."""

    def value(t, X):
        return np.stack([f.value(t, X) for f in fields], axis=1)

    def grad(t, X):
        # (N, l, i, m, m)
        return np.stack([f.grad(t, X) for f in fields], axis=2)

    return value, grad


def stacked_scalar(fields):
    def value(t, X):
        return np.stack([f.value(t, X) for f in fields], axis=1)

    def grad(t, X):
        return np.stack([f.grad(t, X) for f in fields], axis=2)

    return value, grad
