"""Report bundles and their on-disk formats.

``json`` writes ``bundle.json`` (deterministic) and ``environment.json``
(interpreter and library versions); ``csv`` writes flat tables;
``plotdata`` writes one whitespace-separated ``x... margin`` file per nodal
estimate. Every file is written to a temporary name and renamed.
"""

from dataclasses import dataclass, field
import csv
import io
import json
import os
import platform
import sys

import numpy as np

SCHEMA_VERSION = "1.0"


@dataclass
class ReportBundle:
    run_id: str
    command: str
    hypotheses: list = field(default_factory=list)
    estimates: list = field(default_factory=list)
    ledger: dict = field(default_factory=dict)
    sweep: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    constraint_notes: list = field(default_factory=list)
    nodal: list = field(default_factory=list)

    def to_dict(self):
        return {"schema_version": SCHEMA_VERSION, "run_id": self.run_id, "command": self.command,
                "constraint_notes": list(self.constraint_notes), "hypotheses": self.hypotheses,
                "estimates": self.estimates, "ledger": self.ledger, "sweep": self.sweep,
                "errors": self.errors, "extra": self.extra}


def environment():
    import numpy
    import scipy
    import sympy

    return {"python": sys.version.split()[0], "platform": platform.platform(), "numpy": numpy.__version__,
            "scipy": scipy.__version__, "sympy": sympy.__version__}


def _atomic_write(path, text):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _csv_text(rows, columns):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _cell(r.get(k)) for k in columns})
    return buf.getvalue()


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (dict, list)):
        return json.dumps(v, sort_keys=True)
    return "" if v is None else v


def hypothesis_rows(bundle):
    return [{"hypothesis_id": h["hypothesis_id"], "verdict": h["verdict"], "margin": h["margin"],
             "asymptotic": h["asymptotic"], "samples": h["samples"],
             "witness_t": None if h["witness"] is None else h["witness"]["t"],
             "witness_x": None if h["witness"] is None else h["witness"]["x"]} for h in bundle.hypotheses]


def estimate_rows(bundle):
    return [{"estimate_id": e["estimate_id"], "pass": e["pass"], "lhs": e["lhs"], "rhs": e["rhs"],
             "worst_margin": e["worst_margin"], "tol_est": e["tol_est"], "parameters": e["parameters"]}
            for e in bundle.estimates]


def plotdata_text(nodal):
    x = np.atleast_2d(np.asarray(nodal["x"], dtype=float))
    mg = np.asarray(nodal["margin"], dtype=float)
    cols = " ".join([f"x{i + 1}" for i in range(x.shape[1])] + ["margin"])
    lines = [f"# {cols}"]
    for xi, v in zip(x, mg):
        lines.append(" ".join(repr(float(c)) for c in xi) + " " + repr(float(v)))
    return "\n".join(lines) + "\n"


def emit(bundle, directory, formats=("json",)):
    """Write the bundle in the requested formats; returns the written paths."""
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {directory!r}: {exc}") from None
    if not os.access(directory, os.W_OK):
        raise OSError(f"output directory {directory!r} is not writable")
    written = []

    def put(name, text):
        path = os.path.join(directory, name)
        _atomic_write(path, text)
        written.append(path)

    if "json" in formats:
        put("bundle.json", json.dumps(bundle.to_dict(), indent=2, sort_keys=True) + "\n")
        put("environment.json", json.dumps(environment(), indent=2, sort_keys=True) + "\n")
    if "csv" in formats:
        put("hypotheses.csv", _csv_text(hypothesis_rows(bundle),
                                        ["hypothesis_id", "verdict", "margin", "asymptotic", "samples",
                                         "witness_t", "witness_x"]))
        put("estimates.csv", _csv_text(estimate_rows(bundle),
                                       ["estimate_id", "pass", "lhs", "rhs", "worst_margin", "tol_est",
                                        "parameters"]))
        if bundle.sweep:
            cols = []
            for row in bundle.sweep:
                for k in row:
                    if k not in cols:
                        cols.append(k)
            put("sweep.csv", _csv_text(bundle.sweep, cols))
    if "plotdata" in formats:
        for k, (eid, nodal) in enumerate(bundle.nodal):
            put(f"{eid}_{k:03d}.dat", plotdata_text(nodal))
    return written
