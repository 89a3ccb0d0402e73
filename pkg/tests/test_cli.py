import json
import os

import pytest
from click.testing import CliRunner
from hypothesis import given, strategies as st

from parabolica.cli import ConfigError, ReportBundle, emit, load_config, parse_config
from parabolica.cli.main import main

from conftest import CONFIG_DIR, MUTATED_DIR

SHIPPED = sorted(p for p in os.listdir(CONFIG_DIR) if p.endswith(".cfg"))


def _run(args):
    return CliRunner().invoke(main, args, catch_exceptions=False)


def _heat_cfg(tmp_path, extra=""):
    path = tmp_path / "heat.cfg"
    path.write_text("[spec]\nfamily = heat\nd = 1\nm = 1\n\n[grid]\nradius = 2\nh = 0.125\n\n"
                    "[time]\nt = 0.05\ndt = 0.01\n" + extra)
    return str(path)


# ---------------------------------------------------------------------------
# configuration grammar

@pytest.mark.parametrize("name", SHIPPED)
def test_shipped_configs_round_trip(name):
    cfg = load_config(os.path.join(CONFIG_DIR, name))
    again = parse_config(cfg.to_text())
    assert again.sections == cfg.sections and again.present == cfg.present
    assert again.run_id == cfg.run_id


@given(st.floats(0.01, 1.0), st.floats(0.001, 0.5), st.integers(0, 1000), st.sampled_from(["dirichlet", "neumann"]))
def test_round_trip_is_identity(h, dt, seed, bc):
    text = (f"[spec]\nfamily = heat\nd = 1\n[grid]\nradius = {8 * h!r}\nh = {h!r}\nbc = {bc}\n"
            f"[time]\ndt = {dt!r}\n[sampling]\nseed = {seed}\n")
    cfg = parse_config(text)
    assert parse_config(cfg.to_text()).sections == cfg.sections


def test_minimal_heat_config_fills_defaults():
    cfg = parse_config("[spec]\nfamily = heat\n")
    assert cfg.section("grid")["radius"] == 4.0 and cfg.section("time")["theta"] == 1.0
    assert cfg.section("checks")["p"] == [2.0]
    assert cfg.build_spec().d == 1


def test_constraint_violation_is_surfaced_not_rejected():
    cfg = parse_config("[spec]\nfamily = ex1\na = 1\nb = 1\nc = 3.5\n")
    assert cfg.constraint_notes
    assert any("2a" in n or "2 a" in n for n in cfg.constraint_notes)


@pytest.mark.parametrize("text,line,key", [
    ("[spec]\nfamily = heat\n[grid]\nh = 0.1\nh = 0.2\n", 5, "h"),
    ("[spec]\nfamily = heat\n[grid]\nsize = 3\n", 4, "size"),
    ("[spec]\nfamily = heat\n\n[time]\ndt = 0\n", 5, "dt"),
    ("[spec]\nfamily = heat\n[time]\ndt = fast\n", 4, "dt"),
    ("[spec]\nfamily = heat\nwobble = 1\n", 3, "wobble"),
])
def test_diagnostics_carry_line_and_key(text, line, key):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    d = exc.value.diagnostics[0]
    assert (d.line, d.key) == (line, key)
    assert str(line) in str(exc.value)


def test_unknown_section_reported():
    with pytest.raises(ConfigError) as exc:
        parse_config("[spec]\nfamily = heat\n\n[extras]\nx = 1\n")
    assert exc.value.diagnostics[0].line == 4


# ---------------------------------------------------------------------------
# commands and exit codes

def test_examples_lists_both_families():
    res = _run(["examples"])
    assert res.exit_code == 0
    names = [ln.split(":")[0] for ln in res.output.splitlines() if not ln.startswith(" ")]
    assert names == ["ex1", "ex2"]
    assert "constraint:" in res.output


def test_check_shipped_ex1_is_all_satisfied(tmp_path):
    res = _run(["check", "--config", os.path.join(CONFIG_DIR, "ex1.cfg"), "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    data = json.loads((tmp_path / "bundle.json").read_text())
    assert data["schema_version"] and data["hypotheses"]
    assert {h["verdict"] for h in data["hypotheses"]} == {"satisfied_on_samples"}


@pytest.mark.parametrize("name", sorted(os.listdir(MUTATED_DIR)))
def test_mutated_configs_exit_one(tmp_path, name):
    res = _run(["check", "--config", os.path.join(MUTATED_DIR, name), "--out", str(tmp_path)])
    assert res.exit_code == 1


def test_bad_config_exits_two(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("[spec]\nfamily = heat\n[time]\ndt = -1\n")
    res = _run(["check", "--config", str(path), "--out", str(tmp_path / "o")])
    assert res.exit_code == 2
    assert "line 4" in res.output


def test_verify_pointwise_on_heat_passes(tmp_path):
    res = _run(["verify", "pointwise", "--config", os.path.join(CONFIG_DIR, "heat.cfg"), "--out", str(tmp_path),
                "--format", "json,csv,plotdata"])
    assert res.exit_code == 0, res.output
    data = json.loads((tmp_path / "bundle.json").read_text())
    assert [e["estimate_id"] for e in data["estimates"]] == ["pointwise", "pointwise"]
    # one plotdata row per grid node (radius 4, h 1/16 on the line)
    dat = sorted(p for p in os.listdir(tmp_path) if p.endswith(".dat"))
    assert len(dat) == 2
    rows = [ln for ln in (tmp_path / dat[0]).read_text().splitlines() if not ln.startswith("#")]
    assert len(rows) == 129


def test_runs_are_byte_identical(tmp_path):
    cfg = os.path.join(CONFIG_DIR, "ex1.cfg")
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        assert _run(["check", "--config", cfg, "--out", str(d), "--format", "json,csv", "--seed", "7"]).exit_code == 0
        outs.append(d)
    for name in ("bundle.json", "hypotheses.csv", "estimates.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_evolve_writes_trajectory(tmp_path):
    res = _run(["evolve", "--config", _heat_cfg(tmp_path), "--out", str(tmp_path / "o"), "--theta", "0.5"])
    assert res.exit_code == 0, res.output
    man = json.loads((tmp_path / "o" / "trajectory" / "manifest.json").read_text())
    assert man["times"][0] == 0.0 and man["times"][-1] == pytest.approx(0.05)
    extra = json.loads((tmp_path / "o" / "bundle.json").read_text())["extra"]
    assert all(b <= a + 1e-15 for a, b in zip(extra["sup"], extra["sup"][1:]))


def test_sweep_writes_one_row_per_cell(tmp_path):
    cfg = _heat_cfg(tmp_path, "\n[checks]\nestimates = pointwise\n\n[sweep]\nspec.c = -1, -0.5, 0\n"
                              "time.dt = 0.01, 0.005\n")
    res = _run(["sweep", "--config", cfg, "--out", str(tmp_path / "o")])
    assert res.exit_code == 0, res.output
    rows = (tmp_path / "o" / "sweep.csv").read_text().splitlines()
    assert len(rows) == 1 + 6


def test_sweep_continues_past_failing_cells(tmp_path):
    cfg = _heat_cfg(tmp_path, "\n[checks]\nestimates = pointwise\np = 1.5\n\n[sweep]\nspec.beta = 0.1, 10\n")
    res = _run(["sweep", "--config", cfg, "--out", str(tmp_path / "o")])
    assert res.exit_code == 2
    text = (tmp_path / "o" / "sweep.csv").read_text()
    assert len(text.splitlines()) == 3 and "error" in text and "pass" in text


def test_unwritable_output_directory_exits_two(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    res = _run(["check", "--config", _heat_cfg(tmp_path), "--out", str(blocker / "sub")])
    assert res.exit_code == 2


def test_empty_bundle_is_a_valid_skeleton(tmp_path):
    emit(ReportBundle("0" * 16, "check"), str(tmp_path), ["json", "csv"])
    data = json.loads((tmp_path / "bundle.json").read_text())
    assert data["hypotheses"] == [] and data["estimates"] == [] and "schema_version" in data
    assert (tmp_path / "estimates.csv").read_text().count("\n") == 1
