"""Sectioned ``key = value`` run configuration.

Grammar
-------
The file is INI-style text read with :mod:`configparser` in strict mode
(duplicate sections or keys are errors). Keys are case-sensitive. Lists are
comma separated; matrices are written row by row with ``;`` between rows
and ``,`` between entries; lists of matrices or expressions use ``|``.

Sections: ``[spec]``, ``[grid]``, ``[time]``, ``[checks]``, ``[sampling]``,
``[output]``, ``[lyapunov]``, ``[data]``, ``[sweep]``. Unknown sections or
keys are rejected with the offending line number.
"""

from dataclasses import dataclass, field
import configparser
import hashlib
import math
import re

import numpy as np

from ..coeffs.examples import ex1, ex2, heat_spec, spec_from_expressions
from ..coeffs.expr import ExpressionError, scalar_field
from ..coeffs.growth import Growth
from ..hypocheck import HYPOTHESIS_IDS, lyapunov_from_expression, quadratic_lyapunov
from ..sampling import SamplePlan
from ..verify import ESTIMATE_IDS

FAMILIES = ("ex1", "ex2", "heat", "expr")
FORMATS = ("json", "csv", "plotdata")


@dataclass(frozen=True)
class Diagnostic:
    line: int
    section: str
    key: str
    reason: str

    def __str__(self):
        loc = f"line {self.line}" if self.line else "config"
        where = f"[{self.section}]" + (f" {self.key}" if self.key else "")
        return f"{loc}: {where}: {self.reason}"


class ConfigError(ValueError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))


# ---------------------------------------------------------------------------
# value types

def _float(text):
    v = float(text)
    if not math.isfinite(v) and text.strip().lower() not in ("inf", "+inf", "-inf"):
        raise ValueError("not a finite number")
    return v


def _int(text):
    v = float(text)
    if v != int(v):
        raise ValueError("expected an integer")
    return int(v)


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true/false")


def _floats(text):
    return [_float(x) for x in text.split(",") if x.strip()]


def _words(text):
    return [x.strip() for x in text.split(",") if x.strip()]


def _matrix(text):
    rows = [[_float(c) for c in r.split(",")] for r in text.split(";")]
    if len(rows) == 1 and len(rows[0]) == 1:
        return rows[0][0]
    if any(len(r) != len(rows) for r in rows):
        raise ValueError("matrix must be square")
    return rows


def _matrices(text):
    parts = [p.strip() for p in text.split("|")]
    mats = [_matrix(p) for p in parts]
    return mats[0] if len(mats) == 1 else mats


def _exprs(text):
    return [p.strip() for p in text.split("|")]


def _fmt_float(v):
    return repr(float(v))


def _fmt_matrix(M):
    if isinstance(M, (int, float)):
        return _fmt_float(M)
    return "; ".join(", ".join(_fmt_float(x) for x in row) for row in M)


def _fmt_matrices(v):
    if isinstance(v, list) and v and isinstance(v[0], list) and v[0] and isinstance(v[0][0], list):
        return " | ".join(_fmt_matrix(M) for M in v)
    return _fmt_matrix(v)


_FMT = {
    _float: _fmt_float, _int: str, _bool: lambda v: "true" if v else "false",
    _floats: lambda v: ", ".join(_fmt_float(x) for x in v), _words: lambda v: ", ".join(v),
    _matrices: _fmt_matrices, _exprs: lambda v: " | ".join(v), str: str,
}

_FAMILY_KEYS = {
    "ex1": {"d": _int, "m": _int, "a": _float, "b": _float, "c": _float, "Bhat": _matrices, "Chat": _matrices,
            "xi": _float, "beta": _float, "gamma": _float},
    "ex2": {"d": _int, "m": _int, "delta": _float, "a": _float, "b": _float, "c": _float, "s": _float,
            "Bhat": _matrices, "Chat": _matrices, "xi": _float, "beta": _float, "gamma": _float},
    "heat": {"d": _int, "m": _int, "q": _float, "c": _float, "xi": _float, "beta": _float, "gamma": _float},
    "expr": {"d": _int, "m": _int, "Q": str, "B": _exprs, "C": str, "b": _exprs, "kappa": str, "h": str,
             "xi": str, "k": str, "sigma": _float, "beta": _float, "gamma": _float, "t0": _float, "t1": _float},
}

SCHEMA = {
    "grid": {"radius": (_float, 4.0), "h": (_float, 0.125), "inner_radius": (_float, 1.0),
             "bc": (str, "dirichlet"), "upwind": (_bool, False), "radii": (_floats, [])},
    "time": {"s": (_float, 0.0), "t": (_float, 0.1), "dt": (_float, 0.01), "theta": (_float, 1.0),
             "solver": (str, "direct"), "solver_tol": (_float, 1e-10)},
    "checks": {"hypotheses": (_words, []), "estimates": (_words, []), "p": (_floats, [2.0]),
               "q": (_floats, []), "lp_mode": (str, ""), "uniform_mode": (str, "prop23"),
               "threshold_override": (_float, None)},
    "sampling": {"box": (_float, 8.0), "spacing": (_float, 0.25), "n_times": (_int, 3),
                 "refine": (_bool, True), "seed": (_int, 0)},
    "output": {"directory": (str, "out"), "formats": (_words, ["json"])},
    "lyapunov": {"phi": (str, "1 + r2"), "lambda": (_float, 1.0), "growth": (_float, 2.0)},
    "data": {"f": (_exprs, []), "g": (_exprs, [])},
}
SECTIONS = ("spec", "grid", "time", "checks", "sampling", "output", "lyapunov", "data", "sweep")


@dataclass
class RunConfig:
    """Validated configuration; ``sections`` maps section -> key -> typed value."""

    sections: dict
    present: tuple = ()
    constraint_notes: tuple = field(default=(), compare=False)

    def get(self, section, key, default=None):
        return self.sections.get(section, {}).get(key, default)

    @property
    def family(self):
        return self.sections["spec"]["family"]

    def with_overrides(self, overrides):
        """Copy with ``{"section.key": value}`` overrides applied (values already typed)."""
        secs = {k: dict(v) for k, v in self.sections.items()}
        present = set(self.present)
        for dotted, value in overrides.items():
            sec, key = dotted.split(".", 1)
            secs.setdefault(sec, {})[key] = value
            present.add(sec)
        cfg = RunConfig(secs, tuple(s for s in SECTIONS if s in present))
        _validate(cfg, {})
        return cfg

    # builders --------------------------------------------------------------
    def build_spec(self, overrides=None):
        sp = dict(self.sections["spec"])
        sp.update(overrides or {})
        fam = sp.pop("family")
        growth = {k[len("growth."):]: v for k, v in sp.items() if k.startswith("growth.")}
        sp = {k: v for k, v in sp.items() if not k.startswith("growth.")}
        if fam == "ex1":
            return ex1(**sp)
        if fam == "ex2":
            return ex2(**sp)
        if fam == "heat":
            return heat_spec(**sp)
        d, m = sp.pop("d"), sp.pop("m")
        t0, t1 = sp.pop("t0", -math.inf), sp.pop("t1", math.inf)
        hfun = sp.pop("h", None)
        return spec_from_expressions(d, m, sp.pop("Q"), sp.pop("B"), sp.pop("C"), hfun=hfun,
                                     growth={k: Growth.parse(v) for k, v in growth.items()},
                                     time_interval=(t0, t1), **sp)

    def plan(self, seed=None):
        s = self.sections.get("sampling", {})
        d = {k: v for k, (_, v) in SCHEMA["sampling"].items()}
        d.update(s)
        if seed is not None:
            d["seed"] = seed
        return SamplePlan(box=d["box"], spacing=d["spacing"], n_times=d["n_times"], refine=d["refine"], seed=d["seed"])

    def lyapunov(self, d):
        if "lyapunov" not in self.present:
            return None
        ly = self.section("lyapunov")
        if ly["phi"].replace(" ", "") == "1+r2":
            return quadratic_lyapunov(ly["lambda"])
        return lyapunov_from_expression(ly["phi"], d, ly["lambda"], ly["growth"])

    def section(self, name):
        out = {k: v for k, (_, v) in SCHEMA.get(name, {}).items()}
        out.update(self.sections.get(name, {}))
        return out

    def datum(self, d, which="f"):
        """Callable ``X -> (N, m)`` from the ``[data]`` expressions (``None`` if absent)."""
        exprs = self.section("data")[which]
        if not exprs:
            return None
        fields = [scalar_field(e, d) for e in exprs]
        return lambda X: np.stack([f.value(0.0, X) for f in fields], axis=1)

    def sweep_axes(self):
        return dict(self.sections.get("sweep", {}))

    # serialization ---------------------------------------------------------
    def to_text(self):
        out = []
        for sec in SECTIONS:
            if sec not in self.present:
                continue
            vals = self.sections.get(sec, {})
            out.append(f"[{sec}]")
            for key in _key_order(sec, vals):
                v = vals[key]
                if v is None:
                    continue
                out.append(f"{key} = {_format(sec, key, v, vals)}")
            out.append("")
        return "\n".join(out)

    @property
    def run_id(self):
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def _key_order(sec, vals):
    if sec == "spec":
        return ["family"] + sorted(k for k in vals if k != "family")
    return sorted(vals)


def _kind(sec, key, vals):
    if sec == "spec":
        if key == "family":
            return str
        if key.startswith("growth."):
            return str
        return _FAMILY_KEYS[vals["family"]][key]
    if sec == "sweep":
        return _floats
    return SCHEMA[sec][key][0]


def _format(sec, key, v, vals):
    kind = _kind(sec, key, vals)
    if sec == "sweep":
        return ", ".join(_fmt_float(x) for x in v)
    return _FMT[kind](v)


# ---------------------------------------------------------------------------
# parsing

def _line_index(text):
    """``(section, key) -> line`` and ``section -> line`` from a plain scan."""
    keys, secs = {}, {}
    sec = None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"^\[([^\]]+)\]$", line)
        if m:
            sec = m.group(1).strip()
            secs.setdefault(sec, i)
            continue
        m = re.match(r"^([^=:]+?)\s*[=:]", line)
        if m and sec is not None:
            keys.setdefault((sec, m.group(1).strip()), i)
    return keys, secs


def parse_config(text):
    """Parse and validate configuration text.

    Raises
    ------
    ConfigError
        With one :class:`Diagnostic` per problem found.
    """
    cp = configparser.ConfigParser(strict=True, interpolation=None, inline_comment_prefixes=("#",),
                                   default_section="__defaults__")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.DuplicateOptionError as exc:
        raise ConfigError([Diagnostic(exc.lineno or 0, exc.section, exc.option, "duplicate key")]) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError([Diagnostic(exc.lineno or 0, exc.section, "", "duplicate section")]) from None
    except configparser.Error as exc:
        raise ConfigError([Diagnostic(getattr(exc, "lineno", 0) or 0, "", "", str(exc).splitlines()[0])]) from None
    lines, slines = _line_index(text)
    diags = []
    sections = {}
    for sec in cp.sections():
        if sec not in SECTIONS:
            diags.append(Diagnostic(slines.get(sec, 0), sec, "", f"unknown section; known: {', '.join(SECTIONS)}"))
            continue
        sections[sec] = dict(cp[sec])
    if "spec" not in sections:
        diags.append(Diagnostic(0, "spec", "", "missing required section"))
        raise ConfigError(diags)
    typed = {}
    fam = sections["spec"].get("family", "").strip()
    if fam not in FAMILIES:
        diags.append(Diagnostic(lines.get(("spec", "family"), slines.get("spec", 0)), "spec", "family",
                                f"must be one of {', '.join(FAMILIES)}"))
        raise ConfigError(diags)
    for sec, kv in sections.items():
        out = {}
        for key, raw in kv.items():
            line = lines.get((sec, key), slines.get(sec, 0))
            try:
                kind = _kind(sec, key, {"family": fam})
            except KeyError:
                diags.append(Diagnostic(line, sec, key, "unknown key"))
                continue
            try:
                out[key] = kind(raw.strip()) if kind is not str else raw.strip()
            except (ValueError, TypeError) as exc:
                diags.append(Diagnostic(line, sec, key, f"cannot read {raw.strip()!r}: {exc}"))
        typed[sec] = out
    if diags:
        raise ConfigError(diags)
    cfg = RunConfig(typed, tuple(s for s in SECTIONS if s in typed))
    _validate(cfg, lines)
    return cfg


def _validate(cfg, lines):
    diags = []

    def bad(sec, key, reason):
        diags.append(Diagnostic(lines.get((sec, key), 0), sec, key, reason))

    g, t, c, o = cfg.section("grid"), cfg.section("time"), cfg.section("checks"), cfg.section("output")
    if not g["h"] > 0:
        bad("grid", "h", "must be positive")
    if g["radius"] < 4 * g["h"]:
        bad("grid", "radius", "must be at least 4h")
    if g["bc"] not in ("dirichlet", "neumann"):
        bad("grid", "bc", "must be dirichlet or neumann")
    if not t["dt"] > 0:
        bad("time", "dt", "must be positive")
    if not 0 <= t["theta"] <= 1:
        bad("time", "theta", "must lie in [0, 1]")
    if t["t"] < t["s"]:
        bad("time", "t", "must not precede s")
    if t["solver"] not in ("direct", "cg", "bicgstab", "gmres"):
        bad("time", "solver", "must be direct, cg, bicgstab or gmres")
    for h in c["hypotheses"]:
        if h not in HYPOTHESIS_IDS:
            bad("checks", "hypotheses", f"unknown hypothesis {h!r}")
    for e in c["estimates"]:
        if e not in ESTIMATE_IDS:
            bad("checks", "estimates", f"unknown estimate {e!r}")
    if any(p < 1 for p in c["p"]):
        bad("checks", "p", "exponents must be >= 1")
    for fmt in o["formats"]:
        if fmt not in FORMATS:
            bad("output", "formats", f"unknown format {fmt!r}")
    if cfg.section("sampling")["box"] <= 0:
        bad("sampling", "box", "must be positive")
    for key, vals in cfg.sweep_axes().items():
        sec = key.split(".", 1)[0]
        if "." not in key or sec not in ("spec", "grid", "time", "checks"):
            bad("sweep", key, "axes are written section.key with section spec, grid, time or checks")
        elif not vals:
            bad("sweep", key, "needs at least one value")
    if diags:
        raise ConfigError(diags)
    try:
        spec = cfg.build_spec()
    except (ExpressionError, ValueError, TypeError, KeyError) as exc:
        raise ConfigError([Diagnostic(lines.get(("spec", "family"), 0), "spec", "", str(exc))]) from None
    cfg.constraint_notes = tuple(spec.constraint_notes)
    if "data" in cfg.present:
        for which in ("f", "g"):
            exprs = cfg.section("data")[which]
            try:
                for e in exprs:
                    scalar_field(e, spec.d)
            except ExpressionError as exc:
                raise ConfigError([Diagnostic(lines.get(("data", which), 0), "data", which, str(exc))]) from None
    return cfg


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
