import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from finsler_heat.cli import EXIT_CONFIG, EXIT_FAILED, EXIT_OK, EXIT_SOLVER, expand_sweep, main
from finsler_heat.field import load_field

HEAT = {
    "schema_version": 1,
    "experiment": "heat",
    "norm": {"variant": "lp", "p": 4, "dim": 2},
    "grid": {"shape": [16, 16], "boundary": "periodic"},
    "params": {"T": 0.002},
    "solver": {"delta": 5e-4},
}

LAPLACIAN = {
    "schema_version": 1,
    "experiment": "laplacian-compare",
    "norm": {"variant": "quadratic", "A": [[1.0, 0.0], [0.0, 1.0]]},
    "grid": {"shape": [64, 64], "lengths": [2.0, 2.0], "lower": [-1.0, -1.0]},
}


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def test_run_writes_artifacts(tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--config", _write(tmp_path, HEAT), "--out", str(out)]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["passed"] is True and summary["exit_code"] == 0 and summary["schema_version"] == 1
    with open(out / "series.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:3] == ["t", "mass", "energy"] and len(rows) == 6
    g, v = load_field(str(out / "fields" / "final.field"))
    assert g.shape == (16, 16) and np.all(np.isfinite(v))


def test_rerun_is_bit_identical(tmp_path):
    cfg = _write(tmp_path, {**HEAT, "params": {"T": 0.001, "initial": "random"}})
    main(["run", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "3"])
    main(["run", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "3"])
    for name in ("summary.json", "series.csv", "fields/final.field"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_failed_certificate_exits_one(tmp_path):
    cfg = _write(tmp_path, {**LAPLACIAN, "params": {"N": 1.5}})
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out", str(out)]) == EXIT_FAILED
    assert json.loads((out / "summary.json").read_text())["passed"] is False
    assert main(["run", "--config", _write(tmp_path, LAPLACIAN, "ok.json"), "--out", str(tmp_path / "ok")]) == EXIT_OK


def test_unknown_key_is_named(tmp_path, capsys):
    bad = {**HEAT, "grid": {"shape": [8, 8], "boundry": "periodic"}}
    assert main(["run", "--config", _write(tmp_path, bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "boundry" in err and "grid" in err


@pytest.mark.parametrize(
    "bad",
    [
        {**HEAT, "schema_version": 2},
        {**HEAT, "experiment": "teleport"},
        {**HEAT, "solver": {"delta": -1.0}},
        {**HEAT, "norm": {"variant": "lp", "p": 0.5, "dim": 2}},
        {k: v for k, v in HEAT.items() if k != "norm"},
    ],
    ids=["version", "experiment", "delta", "p", "missing-norm"],
)
def test_invalid_configs_exit_two(tmp_path, bad):
    assert main(["run", "--config", _write(tmp_path, bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_unreadable_config_exits_two(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    assert main(["run", "--config", str(p)]) == EXIT_CONFIG
    assert main(["run", "--config", str(tmp_path / "absent.json")]) == EXIT_CONFIG


def test_nonconvergence_exits_three(tmp_path):
    cfg = {**HEAT, "solver": {"delta": 1e-2, "inner_tol": 1e-12, "inner_max_iter": 1}}
    out = tmp_path / "out"
    assert main(["run", "--config", _write(tmp_path, cfg), "--out", str(out)]) == EXIT_SOLVER
    summary = json.loads((out / "summary.json").read_text())
    assert summary["exit_code"] == 3 and "residual" in summary["error"]


def test_experiment_argument_must_match(tmp_path):
    assert main(["run", "davies", "--config", _write(tmp_path, HEAT), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("FINSLER_HEAT_OUT", str(tmp_path / "env"))
    cfg = _write(tmp_path, {"schema_version": 1, "experiment": "norm-info", "norm": {"variant": "lp", "p": 1.5, "dim": 2}})
    assert main(["run", "--config", cfg]) == EXIT_OK
    summary = json.loads((tmp_path / "env" / "summary.json").read_text())
    assert summary["results"]["constants"]["kappa_degenerate"] is True


def test_sweep(tmp_path):
    sweep = {"schema_version": 1, "base": HEAT, "parameters": {"norm.p": [3, 4], "solver.delta": [5e-4, 1e-3]}}
    out = tmp_path / "sw"
    assert main(["sweep", "--config", _write(tmp_path, sweep), "--out", str(out)]) == EXIT_OK
    with open(out / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4 and all(r["passed"] == "True" for r in rows)
    assert (out / "run_003" / "summary.json").exists()


def test_sweep_with_a_bad_run_reports_it(tmp_path):
    sweep = {"schema_version": 1, "base": HEAT, "parameters": {"norm.p": [4, 0.5]}}
    out = tmp_path / "sw"
    assert main(["sweep", "--config", _write(tmp_path, sweep), "--out", str(out)]) == EXIT_FAILED
    with open(out / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["exit_code"] for r in rows] == ["0", "2"]


def test_empty_sweep_exits_two(tmp_path):
    sweep = {"schema_version": 1, "base": HEAT, "parameters": {"norm.p": []}}
    assert expand_sweep(sweep) == []
    assert main(["sweep", "--config", _write(tmp_path, sweep), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_validate(tmp_path, capsys):
    assert main(["validate", "--config", _write(tmp_path, HEAT)]) == EXIT_OK
    assert "valid" in capsys.readouterr().out
    assert main(["validate", "--config", _write(tmp_path, {**HEAT, "extra": 1}, "bad.json")]) == EXIT_CONFIG


def test_console_entry_point(tmp_path):
    cfg = _write(tmp_path, {"schema_version": 1, "experiment": "norm-info", "norm": {"variant": "two_slope_1d", "a": 1.0, "b": 2.0}})
    res = subprocess.run([sys.executable, "-m", "finsler_heat", "run", "--config", cfg, "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert "norm-info: pass" in res.stdout
