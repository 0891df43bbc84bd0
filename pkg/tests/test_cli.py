import csv
import json
import math
import subprocess
import sys

import pytest

from canontrace.cli import ConfigError, dumps_report, main, normalize_config, parse_field, run_job


def write(tmp_path, name, data):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


def test_zeta_task_circle(tmp_path):
    cfg = {"geometry": {"kind": "circle", "N": 64}, "z": [2.0, {"re": 0.3, "im": 0.2}],
           "expect": {"zeta0": -1.0, "zeta_prime0": -2 * math.log(2 * math.pi)}}
    out = tmp_path / "zeta.json"
    code = main(["zeta", "--config", str(write(tmp_path, "c.json", cfg)), "--out", str(out), "--quiet"])
    assert code == 0
    rep = json.loads(out.read_text())
    assert rep["schema_version"] == "1.0" and rep["pass"]
    assert rep["result"]["zeta_prime0"] == pytest.approx(-3.6757541328186907, abs=1e-10)
    rows = list(csv.reader(out.with_suffix(".csv").open(encoding="utf-8")))
    assert rows[0] == ["z_re", "z_im", "zeta_re", "zeta_im"]
    assert float(rows[1][2]) == pytest.approx(2 * math.pi**4 / 90, abs=1e-10)
    # shortest round-trip floats
    assert rows[1][0] == "2.0"


def test_anomaly_task_constant_direction():
    rep, rows, code = run_job("anomaly", {"family": "laplacian_2d", "functional": {"kind": "zeta_prime0"},
                                          "f": 0.1})
    assert code == 0
    assert rep["result"]["rhs"] == pytest.approx(-0.2, abs=1e-12)
    assert rep["result"]["lhs"] == pytest.approx(-0.2, abs=1e-6)


def test_residue_task():
    rep, _, code = run_job("residue", {"power": -1.0, "expect": {"residue": 1 / (2 * math.pi)}})
    assert code == 0
    assert rep["result"]["residue"] == pytest.approx(1 / (2 * math.pi), abs=1e-15)


def test_cutoff_task_bracket():
    sym = {"bracket": {"dimension": 1, "terms": [{"monomial": [0], "beta": -1.5}]}}
    rep, _, code = run_job("cutoff", {"symbol": sym})
    assert code == 0
    assert rep["result"]["c"] == pytest.approx(math.sqrt(math.pi) * math.gamma(0.25) / math.gamma(0.75), abs=1e-12)


def test_laurent_task():
    cfg = {"geometry": {"kind": "circle", "N": 64}, "operand": {"kind": "power", "s": -0.5}, "K": 1}
    rep, _, code = run_job("laurent", cfg)
    assert code == 0
    assert rep["result"]["pole"] == pytest.approx(1.0, abs=1e-12)
    assert rep["result"]["finite_part"] == pytest.approx(2 * 0.5772156649015329, abs=1e-10)


def test_covariance_task():
    rep, _, code = run_job("covariance", {"geometry": {"kind": "circle", "N": 64}, "family": "dirac_circle",
                                          "f": {"random": {"seed": 3, "amplitude": 0.3}}})
    assert code == 0 and rep["result"]["residual"] < 1e-6


def test_failed_check_exit_code(tmp_path):
    cfg = {"power": -1.0, "expect": {"residue": 0.2}}
    assert main(["residue", "--config", str(write(tmp_path, "c.json", cfg)), "--quiet"]) == 2


@pytest.mark.parametrize("cfg", [
    {"geometry": {"kind": "torus", "N": 32, "bogus": 1}},
    {"tolerance": 1e-6, "extra": True},
    {"geometry": {"N": 32.5}},
    {"task": "cutoff"},
])
def test_schema_violations_exit_1(tmp_path, cfg):
    assert main(["zeta", "--config", str(write(tmp_path, "c.json", cfg)), "--quiet"]) == 1


def test_unsupported_pair_exit_1(tmp_path):
    cfg = {"geometry": {"kind": "circle", "N": 64}, "family": "dirac_circle", "functional": {"kind": "zeta_prime0"},
           "f": 0.1}
    assert main(["anomaly", "--config", str(write(tmp_path, "c.json", cfg)), "--quiet"]) == 1


def test_missing_required_key():
    with pytest.raises(ConfigError, match="family"):
        normalize_config("anomaly", {"functional": {"kind": "zeta0"}, "f": 0.0})


def test_defaults_are_filled():
    cfg = normalize_config("zeta", {})
    assert cfg["geometry"] == {"kind": "torus", "lengths": [1.0, 1.0], "N": 64, "phi": 0.0}
    assert cfg["t0"] == 1.0 and cfg["tolerance"] == 1e-6


def test_field_specs():
    L = (1.0,)
    assert parse_field(0.5, L, 16).values == 0.5
    assert parse_field({"constant": 2}, L, 16).values == 2.0
    f = parse_field({"fourier": [{"k": [1], "cos": 0.1}]}, L, 16)
    assert f.values[0] == pytest.approx(0.1)
    r = parse_field({"random": {"seed": 1, "amplitude": 0.2, "offset": 1.0}}, L, 16)
    assert r.mean() == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        parse_field({"random": {"seed": 1, "scale": 2}}, L, 16)
    with pytest.raises(ConfigError):
        parse_field("cos", L, 16)


def test_determinism_byte_identical(tmp_path):
    cfg = {"geometry": {"kind": "circle", "N": 64, "phi": {"random": {"seed": 5, "amplitude": 0.1}}},
           "operator": {"family": "laplacian"}}
    a = dumps_report(run_job("zeta", cfg)[0])
    b = dumps_report(run_job("zeta", json.loads(json.dumps(cfg)))[0])
    assert a == b


def test_cache_cold_and_warm_identical(tmp_path):
    cfg = {"geometry": {"kind": "circle", "N": 256, "phi": {"random": {"seed": 2, "amplitude": 0.2}}},
           "operator": {"family": "dirac_circle"}, "expect": {"eta0": 0.5}, "tolerance": 1e-5}
    cache = tmp_path / "cache"
    cold, _, c1 = run_job("zeta", cfg, cache)
    assert list(cache.iterdir())
    warm, _, c2 = run_job("zeta", cfg, cache)
    assert c1 == c2 == 0
    assert dumps_report(cold) == dumps_report(warm)


def test_console_entry_point(tmp_path):
    cfg = write(tmp_path, "c.json", {"power": -1.0})
    proc = subprocess.run([sys.executable, "-m", "canontrace.cli", "residue", "--config", str(cfg), "--quiet"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["task"] == "residue"
