"""Configuration ingestion, run modes, and report emission."""

import json
import os

import numpy as np
import pytest

from quasilin.cli import ConfigError, load_config, main, run

FIXDIR = os.path.join(os.path.dirname(__file__), "..", "src", "quasilin",
                      "fixtures")


def _fixture(name):
    return os.path.join(FIXDIR, name)


def _write(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


TINY_SOLVE = """
schema_version = 1
mode = "solve"

[grid]
d = 1
n = 128
J = 4

[nonlinearity]
metric = "conformal"
alpha = 0.2
forcing = "u_squared"
beta = 4.0

[data]
kind = "gaussian"
amplitude = 0.2
width = 0.8

[trap]
epsilon = 1e-3
s0 = 2.51
r_min = 0.5
c0_margin = 0.01

[solver]
T = 0.02
dt = 2e-3
s0 = 2.51
n_max = 10
tol = 1e-7
lifespan_c_scale = 0.01

[output]
formats = ["json", "csv"]
"""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def test_defaults_stamped(tmp_path):
    cfg = load_config(_write(tmp_path, 'mode = "verify"\n'))
    assert cfg["mode"] == "verify"
    assert cfg["solver"]["tol"] == 1e-8          # default visible in echo
    assert cfg["trap"]["kappa"] == 25.0


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown config key"):
        load_config(_write(tmp_path, "bogus = 3\n"))
    with pytest.raises(ConfigError, match="unknown config key"):
        load_config(_write(tmp_path, "[trap]\nbogus = 3\n"))


def test_bad_enum_rejected(tmp_path):
    with pytest.raises(ConfigError, match="must be one of"):
        load_config(_write(tmp_path, 'mode = "fly"\n'))


def test_bad_type_rejected(tmp_path):
    with pytest.raises(ConfigError, match="numeric"):
        load_config(_write(tmp_path, '[solver]\nT = "long"\n'))


def test_schema_version_checked(tmp_path):
    with pytest.raises(ConfigError, match="schema_version"):
        load_config(_write(tmp_path, "schema_version = 99\n"))


def test_main_exit_2_on_bad_config(tmp_path):
    rc = main(["--config", _write(tmp_path, "nope = 1\n"),
               "--out", str(tmp_path / "out")])
    assert rc == 2


def test_fixture_configs_load():
    for name in ("flat.toml", "conformal_bump.toml", "ring_well.toml",
                 "small_quadratic.toml", "small_cubic.toml"):
        cfg = load_config(_fixture(name))
        assert cfg["schema_version"] == 1


# ---------------------------------------------------------------------------
# runs
# ---------------------------------------------------------------------------

def test_verify_mode(tmp_path):
    rc = main(["--config", _fixture("flat.toml"), "--mode", "verify",
               "--out", str(tmp_path / "v")])
    assert rc == 0
    rep = json.load(open(tmp_path / "v" / "report.json"))
    assert rep["ok"]
    assert all(c["ok"] for c in rep["checks"].values())
    assert os.path.exists(tmp_path / "v" / "checks.csv")


def test_solve_mode_tiny(tmp_path):
    rc = main(["--config", _write(tmp_path, TINY_SOLVE),
               "--out", str(tmp_path / "s")])
    assert rc == 0
    rep = json.load(open(tmp_path / "s" / "report.json"))
    assert rep["converged"]
    # config echo is complete enough to re-run from
    assert rep["config"]["solver"]["dt"] == 2e-3
    assert rep["config"]["trap"]["kappa"] == 25.0
    rows = open(tmp_path / "s" / "trace.csv").read().strip().splitlines()
    assert len(rows) - 1 == len(rep["trace"]["diff_norms"])


def test_report_json_round_trip(tmp_path):
    main(["--config", _write(tmp_path, TINY_SOLVE),
          "--out", str(tmp_path / "r")])
    rep = json.load(open(tmp_path / "r" / "report.json"))
    text = json.dumps(rep, sort_keys=True)
    assert json.loads(text) == rep


def test_determinism(tmp_path):
    main(["--config", _write(tmp_path, TINY_SOLVE),
          "--out", str(tmp_path / "a")])
    main(["--config", _write(tmp_path, TINY_SOLVE),
          "--out", str(tmp_path / "b")])
    a = open(tmp_path / "a" / "report.json", "rb").read()
    b = open(tmp_path / "b" / "report.json", "rb").read()
    assert a == b


def test_analyze_emits_ray_dump_and_figures(tmp_path):
    cfg = load_config(_fixture("ring_well.toml"))
    cfg["trap"]["n_boundary"] = 4
    cfg["trap"]["n_boundary_dirs"] = 3
    cfg["output"]["formats"] = ["json", "csv", "png"]
    rc = run(cfg, str(tmp_path / "an"))
    assert rc == 0
    rep = json.load(open(tmp_path / "an" / "report.json"))
    assert rep["trap"]["trapped"]
    rows = open(tmp_path / "an" / "worst_ray.csv").read().strip().splitlines()
    assert len(rows) > 2
    # CSV sample count matches the stored ray
    assert os.path.exists(tmp_path / "an" / "rays.png")


def test_sweep_mode_T(tmp_path):
    text = TINY_SOLVE.replace('mode = "solve"', 'mode = "sweep"')
    text += '\n[sweep]\nkind = "T"\nT_values = [0.02, 0.01]\n'
    rc = main(["--config", _write(tmp_path, text),
               "--out", str(tmp_path / "sw")])
    assert rc == 0
    rep = json.load(open(tmp_path / "sw" / "report.json"))
    assert len(rep["table"]) == 2
    assert all(r["converged"] for r in rep["table"])


def test_sweep_mode_continuous_dependence(tmp_path):
    text = TINY_SOLVE.replace('mode = "solve"', 'mode = "sweep"')
    text += '\n[sweep]\nkind = "continuous_dependence"\ndeltas = [1e-2, 1e-3]\n'
    rc = main(["--config", _write(tmp_path, text),
               "--out", str(tmp_path / "cd")])
    assert rc == 0
    rep = json.load(open(tmp_path / "cd" / "report.json"))
    assert [row["delta"] for row in rep["table"]] == [1e-2, 1e-3]


def test_numerical_failure_exit_3(tmp_path):
    # data too wide for the box: the radius search fails and is reported
    text = TINY_SOLVE.replace('amplitude = 0.2', 'amplitude = 2.0')
    text = text.replace('width = 0.8', 'width = 2.5')
    rc = main(["--config", _write(tmp_path, text),
               "--out", str(tmp_path / "f")])
    assert rc == 3
    rep = json.load(open(tmp_path / "f" / "report.json"))
    assert "error" in rep
