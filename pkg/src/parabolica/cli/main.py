"""Command line: ``parabolica check|evolve|verify|sweep|examples``.

Exit codes: 0 when every selected check passes (inconclusive verdicts
count as passing), 1 when at least one is violated, 2 on configuration or
runtime errors.
"""

import itertools
import math
import os
import sys
import warnings

import click
import numpy as np

from ..coeffs.examples import CATALOGUE
from ..evolve import EvolutionConfig, evolve
from ..hypocheck import VIOLATED, run_check
from ..mesh import PecletWarning, build_grid, lp_norm, sup_norm
from ..verify import Harness, domain_convergence, run_estimate
from .config import ConfigError, FORMATS, load_config
from .emit import ReportBundle, emit

EXIT_OK, EXIT_VIOLATED, EXIT_ERROR = 0, 1, 2
DEFAULT_DATUM = "exp(-4*r2)"


def default_hypotheses(spec, has_lyap):
    ids = ["symmetry", "ellipticity", "K_nonneg"]
    if has_lyap:
        ids += ["lyapunov_A_eta", "lyapunov_A"]
    if spec.has_decomposition:
        ids += ["decomposition", "H_beta"]
    ids += ["L2_dissipativity"]
    if spec.kappa is not None:
        ids += ["kappa_bounded", "tilde_K_nonneg_weak"]
        if has_lyap:
            ids += ["lyapunov_tilde_A_eta"]
    if spec.has_decomposition and spec.k_bound is not None:
        ids += ["gradient"]
    return ids


def _evolution_config(cfg):
    t = cfg.section("time")
    return EvolutionConfig(theta=t["theta"], dt=t["dt"], solver=t["solver"], solver_tol=t["solver_tol"],
                           upwind=cfg.section("grid")["upwind"])


def _datum(cfg, spec, which="f"):
    f = cfg.datum(spec.d, which)
    if f is not None:
        return f
    from ..coeffs.expr import scalar_field

    fld = scalar_field(DEFAULT_DATUM, spec.d)
    return lambda X: np.repeat(fld.value(0.0, X)[:, None], spec.m, axis=1)


def run_hypotheses(cfg, bundle, seed=None, spec=None):
    spec = spec or cfg.build_spec()
    plan = cfg.plan(seed)
    lyap = cfg.lyapunov(spec.d)
    ids = cfg.section("checks")["hypotheses"] or default_hypotheses(spec, lyap is not None)
    t = cfg.section("time")
    J = (t["s"], t["t"]) if t["t"] > t["s"] else None
    for hid in ids:
        try:
            rep = run_check(spec, hid, J=J, plan=plan, lyap=lyap)
            bundle.hypotheses.append(rep.to_dict())
        except Exception as exc:  # reported per check, the run continues
            bundle.errors.append({"where": f"check {hid}", "error": f"{type(exc).__name__}: {exc}"})


def run_estimates(cfg, bundle, ids=None, seed=None, spec=None):
    spec = spec or cfg.build_spec()
    g, t, c = cfg.section("grid"), cfg.section("time"), cfg.section("checks")
    ecfg = _evolution_config(cfg)
    harness = Harness(spec, plan=cfg.plan(seed), lyap=cfg.lyapunov(spec.d), bc=g["bc"],
                      threshold_override=c["threshold_override"])
    ids = list(ids or c["estimates"]) or ["pointwise"]
    f = _datum(cfg, spec, "f")
    gfun = cfg.datum(spec.d, "g") or f
    grid = None
    for eid in ids:
        if eid == "domain_convergence":
            try:
                radii = g["radii"] or [g["radius"], 1.5 * g["radius"], 2 * g["radius"]]
                rep = domain_convergence(spec, f, radii, g["inner_radius"], t["s"], t["t"], g["h"], ecfg)
                bundle.estimates.append(rep.to_dict())
            except Exception as exc:
                bundle.errors.append({"where": f"estimate {eid}", "error": f"{type(exc).__name__}: {exc}"})
            continue
        if grid is None:
            grid = build_grid(spec.d, g["radius"], g["h"])
        ps = c["p"] if eid not in ("duality", "adjoint_l1", "uniform", "energy") else [c["p"][0]]
        qs = c["q"] or [math.inf]
        for p in ps:
            for q in (qs if eid == "hyper" else [None]):
                try:
                    kw = {"g": gfun}
                    if eid == "lp_bound" and c["lp_mode"]:
                        kw["mode"] = c["lp_mode"]
                    if eid == "uniform":
                        kw["mode"] = c["uniform_mode"]
                    rep = run_estimate(eid, spec, f, t["s"], t["t"], grid, ecfg, harness, p=p, q=q, **kw)
                    bundle.estimates.append(rep.to_dict())
                    if rep.nodal is not None:
                        bundle.nodal.append((f"{eid}_p{p:g}", rep.nodal))
                except Exception as exc:
                    bundle.errors.append({"where": f"estimate {eid} p={p}" + ("" if q is None else f" q={q}"),
                                          "error": f"{type(exc).__name__}: {exc}"})
    bundle.ledger = harness.ledger.to_dict()


def exit_code(bundle):
    if bundle.errors:
        return EXIT_ERROR
    if any(h["verdict"] == VIOLATED for h in bundle.hypotheses):
        return EXIT_VIOLATED
    if any(not e["pass"] for e in bundle.estimates):
        return EXIT_VIOLATED
    if any(row.get("status") == "violated" for row in bundle.sweep):
        return EXIT_VIOLATED
    return EXIT_OK


def _formats(text, cfg):
    fm = [x.strip() for x in text.split(",")] if text else cfg.section("output")["formats"]
    for x in fm:
        if x not in FORMATS:
            raise click.BadParameter(f"unknown format {x!r}; choose from {', '.join(FORMATS)}")
    return fm


def _load(path):
    try:
        return load_config(path)
    except ConfigError as exc:
        click.echo(f"configuration error in {path}:", err=True)
        for d in exc.diagnostics:
            click.echo(f"  {d}", err=True)
        sys.exit(EXIT_ERROR)
    except OSError as exc:
        click.echo(f"cannot read {path}: {exc}", err=True)
        sys.exit(EXIT_ERROR)


def _finish(bundle, cfg, out, fmt):
    outdir = out or cfg.section("output")["directory"]
    try:
        paths = emit(bundle, outdir, _formats(fmt, cfg))
    except OSError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_ERROR)
    for h in bundle.hypotheses:
        click.echo(f"{h['hypothesis_id']:24s} {h['verdict']:22s} margin={h['margin']}")
    for e in bundle.estimates:
        click.echo(f"{e['estimate_id']:24s} {'pass' if e['pass'] else 'FAIL':22s} margin={e['worst_margin']}")
    for err in bundle.errors:
        click.echo(f"error in {err['where']}: {err['error']}", err=True)
    click.echo(f"wrote {len(paths)} file(s) to {outdir}")
    sys.exit(exit_code(bundle))


_common = [
    click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False),
                 help="Run configuration file."),
    click.option("--out", default=None, help="Output directory (overrides [output] directory)."),
    click.option("--format", "fmt", default=None, help="Comma-separated subset of json,csv,plotdata."),
    click.option("--seed", type=int, default=None, help="Seed for randomized sphere sampling."),
]


def common(fn):
    for opt in reversed(_common):
        fn = opt(fn)
    return fn


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Evolution operators of parabolic systems: hypothesis checks and estimate verification."""


@main.command()
@common
def check(config_path, out, fmt, seed):
    """Check the structural hypotheses of the configured operator."""
    cfg = _load(config_path)
    bundle = ReportBundle(cfg.run_id, "check", constraint_notes=list(cfg.constraint_notes))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PecletWarning)
        run_hypotheses(cfg, bundle, seed)
    _finish(bundle, cfg, out, fmt)


@main.command("evolve")
@common
@click.option("--radius", type=float, default=None)
@click.option("--h", "h", type=float, default=None)
@click.option("--dt", type=float, default=None)
@click.option("--theta", type=float, default=None)
@click.option("--bc", type=click.Choice(["dirichlet", "neumann"]), default=None)
@click.option("--from", "s", type=float, default=None)
@click.option("--to", "t", type=float, default=None)
@click.option("--flavor", type=click.Choice(["vector_A", "scalar_A"]), default="vector_A", show_default=True)
def evolve_cmd(config_path, out, fmt, seed, radius, h, dt, theta, bc, s, t, flavor):
    """Evolve the configured datum and export the trajectory."""
    cfg = _load(config_path)
    over = {k: v for k, v in {"grid.radius": radius, "grid.h": h, "time.dt": dt, "time.theta": theta,
                              "grid.bc": bc, "time.s": s, "time.t": t}.items() if v is not None}
    try:
        cfg = cfg.with_overrides(over) if over else cfg
    except ConfigError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_ERROR)
    bundle = ReportBundle(cfg.run_id, "evolve", constraint_notes=list(cfg.constraint_notes))
    outdir = out or cfg.section("output")["directory"]
    try:
        spec = cfg.build_spec()
        g, tm = cfg.section("grid"), cfg.section("time")
        grid = build_grid(spec.d, g["radius"], g["h"])
        f = _datum(cfg, spec)(grid.nodes)
        if flavor == "scalar_A":
            f = np.linalg.norm(f.reshape(grid.N, -1), axis=1)[:, None]
        f = f.reshape(grid.N, -1).copy()
        if g["bc"] == "dirichlet":
            f[grid.boundary] = 0.0
        tr = evolve(spec, grid, g["bc"], flavor, f, tm["s"], tm["t"], _evolution_config(cfg))
        tr.export(os.path.join(outdir, "trajectory"))
        bundle.extra = {"times": tr.times, "l2": [lp_norm(v, grid, 2) for v in tr.values],
                        "sup": [sup_norm(v, grid) for v in tr.values], "grid": grid.describe()}
    except Exception as exc:
        bundle.errors.append({"where": "evolve", "error": f"{type(exc).__name__}: {exc}"})
    _finish(bundle, cfg, out, fmt)


@main.command()
@common
@click.argument("estimates", nargs=-1)
def verify(config_path, out, fmt, seed, estimates):
    """Verify the selected estimates (default: those listed in [checks])."""
    cfg = _load(config_path)
    bundle = ReportBundle(cfg.run_id, "verify", constraint_notes=list(cfg.constraint_notes))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PecletWarning)
        try:
            run_estimates(cfg, bundle, estimates or None, seed)
        except Exception as exc:
            bundle.errors.append({"where": "verify", "error": f"{type(exc).__name__}: {exc}"})
    _finish(bundle, cfg, out, fmt)


@main.command()
@common
def sweep(config_path, out, fmt, seed):
    """Run the checks over the cartesian product of the [sweep] axes; one CSV row per cell."""
    cfg = _load(config_path)
    axes = cfg.sweep_axes()
    if not axes:
        click.echo("the [sweep] section is empty", err=True)
        sys.exit(EXIT_ERROR)
    bundle = ReportBundle(cfg.run_id, "sweep", constraint_notes=list(cfg.constraint_notes))
    keys = sorted(axes)
    for k, values in enumerate(itertools.product(*(axes[a] for a in keys))):
        row = {"cell": k}
        row.update(dict(zip(keys, values)))
        try:
            over = {a: (int(v) if a.split(".")[1] in ("d", "m", "n_times", "seed") else v)
                    for a, v in zip(keys, values)}
            cell = cfg.with_overrides(over)
            sub = ReportBundle(cell.run_id, "sweep-cell")
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", PecletWarning)
                run_hypotheses(cell, sub, seed)
                if cell.section("checks")["estimates"]:
                    run_estimates(cell, sub, None, seed)
            for h in sub.hypotheses:
                row[h["hypothesis_id"]] = h["verdict"]
            for e in sub.estimates:
                row[e["estimate_id"] + "_pass"] = e["pass"]
            code = exit_code(sub)
            row["status"] = {EXIT_OK: "pass", EXIT_VIOLATED: "violated", EXIT_ERROR: "error"}[code]
            if sub.errors:
                row["error"] = "; ".join(f"{e['where']}: {e['error']}" for e in sub.errors)
        except Exception as exc:
            row["status"] = "error"
            row["error"] = f"{type(exc).__name__}: {exc}"
        bundle.sweep.append(row)
    if any(r["status"] == "error" for r in bundle.sweep):
        bundle.extra["failed_cells"] = [r["cell"] for r in bundle.sweep if r["status"] == "error"]
    _finish_sweep(bundle, cfg, out, fmt)


def _finish_sweep(bundle, cfg, out, fmt):
    outdir = out or cfg.section("output")["directory"]
    fm = _formats(fmt, cfg)
    if "csv" not in fm:
        fm = list(fm) + ["csv"]
    try:
        paths = emit(bundle, outdir, fm)
    except OSError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_ERROR)
    for row in bundle.sweep:
        click.echo(f"cell {row['cell']:3d} {row['status']}" + (f"  ({row['error']})" if "error" in row else ""))
    click.echo(f"wrote {len(paths)} file(s) to {outdir}")
    codes = [r["status"] for r in bundle.sweep]
    sys.exit(EXIT_ERROR if "error" in codes else EXIT_VIOLATED if "violated" in codes else EXIT_OK)


@main.command()
def examples():
    """List the built-in example families with their parameter constraints."""
    for name in sorted(CATALOGUE):
        entry = CATALOGUE[name]
        click.echo(f"{name}: {entry['description']}")
        for c in entry["constraints"]:
            click.echo(f"    constraint: {c}")
        click.echo("    defaults: " + ", ".join(f"{k}={v}" for k, v in entry["defaults"].items()))


if __name__ == "__main__":
    main()
