import json

import numpy as np
import pytest
from click.testing import CliRunner

from homolab.cli import main
from homolab.config import ConfigError, ExperimentConfig, load_config
from homolab.harness import check_bounds, run_experiment
from homolab.rates import fit_rate, seed_stream


# --------------------------------------------------------------------------
# rates and seeds
# --------------------------------------------------------------------------


def test_fit_rate_recovers_an_exact_power_law():
    x = np.array([1.0, 2.0, 4.0, 8.0])
    y = 3.0 * x**-0.5
    fit = fit_rate(x, y)
    assert fit.slope == pytest.approx(-0.5, abs=1e-12)
    assert fit.intercept == pytest.approx(np.log(3.0), abs=1e-12)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    assert fit.n == 4
    assert "slope" in str(fit)


def test_fit_rate_input_validation():
    with pytest.raises(ValueError, match="3 points"):
        fit_rate([1.0, 2.0], [1.0, 2.0])
    with pytest.raises(ValueError, match="positive"):
        fit_rate([1.0, 2.0, -3.0], [1.0, 2.0, 3.0])
    with pytest.raises(ValueError, match="equal length"):
        fit_rate([1.0, 2.0, 3.0], [1.0, 2.0])


def test_seed_stream_is_deterministic_and_collision_free():
    a = [seed_stream(7, i) for i in range(10_000)]
    b = [seed_stream(7, i) for i in range(10_000)]
    assert a == b
    assert len(set(a)) == 10_000
    assert seed_stream(7, 0) != seed_stream(8, 0)
    with pytest.raises(ValueError, match="non-negative"):
        seed_stream(0, -1)


# --------------------------------------------------------------------------
# config loading
# --------------------------------------------------------------------------

GOOD = {
    "kind": "spectral_gap",
    "d": 1,
    "n_samples": 16,
    "base_seed": 3,
    "family": {"name": "rational_isotropic"},
    "field": {"epsilon": 0.03125},
    "grid": {"n": 128, "L": 1.0},
}


def test_config_roundtrip_toml_and_json(tmp_path):
    toml_path = tmp_path / "c.toml"
    toml_path.write_text(
        'kind = "spectral_gap"\nd = 1\nn_samples = 16\nbase_seed = 3\n'
        '[family]\nname = "rational_isotropic"\n'
        "[field]\nepsilon = 0.03125\n[grid]\nn = 128\nL = 1.0\n"
    )
    json_path = tmp_path / "c.json"
    json_path.write_text(json.dumps(GOOD))
    a, b = load_config(toml_path), load_config(json_path)
    assert a == b
    assert a.kind == "spectral_gap" and a.field["epsilon"] == 0.03125


def test_config_validation_reports_the_offending_key():
    with pytest.raises(ConfigError, match="'kind'"):
        ExperimentConfig.from_dict({"d": 1, "family": {"name": "linear"}})
    with pytest.raises(ConfigError, match="kind 'spin'"):
        ExperimentConfig.from_dict({**GOOD, "kind": "spin"})
    with pytest.raises(ConfigError, match="d must be"):
        ExperimentConfig.from_dict({**GOOD, "d": 5})
    with pytest.raises(ConfigError, match="family.name"):
        ExperimentConfig.from_dict({**GOOD, "family": {}})
    with pytest.raises(ConfigError, match="tol"):
        ExperimentConfig.from_dict({**GOOD, "tol": 2.0})
    with pytest.raises(ConfigError, match="n_samples"):
        ExperimentConfig.from_dict({**GOOD, "n_samples": 0})
    with pytest.raises(ConfigError, match="epsilon"):
        ExperimentConfig.from_dict({**GOOD, "field": {"epsilon": -1.0}})


def test_config_rejects_unknown_format(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("kind: spectral_gap")
    with pytest.raises(ConfigError, match="format"):
        load_config(path)


# --------------------------------------------------------------------------
# runner
# --------------------------------------------------------------------------


def test_run_experiment_writes_provenance_and_is_deterministic(tmp_path):
    cfg = ExperimentConfig.from_dict(GOOD)
    out1 = run_experiment(cfg, out_dir=tmp_path / "a")
    out2 = run_experiment(cfg, out_dir=tmp_path / "b")
    assert out1.csv_path.read_text().splitlines()[0].startswith(
        "kind,d,family,tol,version,")
    assert out1.csv_path.read_text() == out2.csv_path.read_text()
    s1 = json.loads(out1.json_path.read_text())
    assert s1["kind"] == "spectral_gap"
    assert s1["version"] == s1["config"].get("version", s1["version"])
    assert s1["config"]["base_seed"] == 3


def test_run_experiment_localization_kind(tmp_path):
    cfg = ExperimentConfig.from_dict({
        "kind": "localization", "d": 1, "n_samples": 2, "base_seed": 1,
        "family": {"name": "rational_isotropic"},
        "field": {"epsilon": 1 / 128}, "grid": {"n": 512, "L": 1.0},
        "sweep": {"T_over_eps2": [4, 16, 64]},
    })
    out = run_experiment(cfg, out_dir=tmp_path, check=True)
    summary = json.loads(out.json_path.read_text())
    assert "fit" in summary and "check_passed" in summary
    assert len(out.rows) == 6


def test_run_experiment_structure_kind(tmp_path):
    cfg = ExperimentConfig.from_dict({
        "kind": "structure", "d": 1, "n_samples": 3, "base_seed": 1,
        "family": {"name": "rational_isotropic"},
        "field": {"epsilon": 1 / 8}, "grid": {"n": 64, "L": 1.0},
    })
    out = run_experiment(cfg, out_dir=tmp_path, check=True)
    assert out.summary["passed"]
    assert out.summary["check_passed"]


def test_check_bounds_windows():
    assert check_bounds("fluctuation", 1, -0.5, {})
    assert not check_bounds("fluctuation", 1, -0.1, {})
    assert check_bounds("systematic", 1, -1.0, {})
    assert not check_bounds("systematic", 1, -0.5, {})
    assert not check_bounds("fluctuation", 3, -0.5, {})  # no window registered
    assert check_bounds("weight_independence", 1, None, {"consistent": True})
    assert not check_bounds("structure", 1, None, {"passed": False})


# --------------------------------------------------------------------------
# CLI
# --------------------------------------------------------------------------


def test_cli_run_and_fit(tmp_path):
    cfg_path = tmp_path / "exp.toml"
    cfg_path.write_text(
        'kind = "localization"\nd = 1\nn_samples = 2\nbase_seed = 1\n'
        f'out_dir = "{tmp_path / "out"}"\n'
        '[family]\nname = "rational_isotropic"\n'
        "[field]\nepsilon = 0.0078125\n[grid]\nn = 512\nL = 1.0\n"
        "[sweep]\nT_over_eps2 = [4, 16, 64]\n"
    )
    runner = CliRunner()
    res = runner.invoke(main, ["run", str(cfg_path)])
    assert res.exit_code == 0, res.output
    assert "fitted slope" in res.output

    gap_cfg = tmp_path / "gap.toml"
    gap_cfg.write_text(
        'kind = "spectral_gap"\nd = 1\nn_samples = 8\nbase_seed = 1\n'
        f'out_dir = "{tmp_path / "gap"}"\n'
        '[family]\nname = "rational_isotropic"\n'
        "[field]\nepsilon = 0.03125\n[grid]\nn = 128\nL = 1.0\n"
    )
    res = runner.invoke(main, ["run", str(gap_cfg), "--check", "--workers", "2"])
    assert res.exit_code == 0, res.output
    assert "check: PASS" in res.output

    res = runner.invoke(main, ["fit", str(tmp_path / "out" / "localization.csv"),
                               "--x", "sqrtT", "--y", "gap"])
    assert res.exit_code == 0, res.output
    assert "slope" in res.output

    res = runner.invoke(main, ["fit", str(tmp_path / "out" / "localization.csv"),
                               "--x", "nope", "--y", "gap"])
    assert res.exit_code != 0
    assert "not found" in res.output


def test_cli_reports_config_errors_cleanly(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text('kind = "spin"\nd = 1\n[family]\nname = "linear"\n')
    res = CliRunner().invoke(main, ["run", str(bad)])
    assert res.exit_code != 0
    assert "spin" in res.output
