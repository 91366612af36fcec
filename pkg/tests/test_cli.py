import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from cltlab.cli import run
from cltlab.errors import InputError
from cltlab.report import emit_report, json_text


def write_cfg(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def test_models_lists_catalog(capsys):
    assert run(["models"]) == 0
    names = [m["name"] for m in json.loads(capsys.readouterr().out)["models"]]
    assert "two_state" in names and "ar1_scalar" in names


def test_rate_two_state(tmp_path):
    cfg = write_cfg(tmp_path, {"model": {"catalog": "two_state"}, "params": {"n_grid": [64, 128, 256, 512]}})
    out = tmp_path / "out"
    assert run(["rate", "--config", cfg, "--out", str(out), "--svg"]) == 0
    with open(out / "rate.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["n", "distance", "method", "band_low", "band_high"]
    doc = json.loads((out / "rate.json").read_text())
    assert doc["schema_version"] == 1 and -0.65 <= doc["summary"]["slope"] <= -0.4
    assert (out / "rate.svg").read_text().startswith("<svg")
    assert b"\r\n" not in (out / "rate.csv").read_bytes()


def test_empty_grid_is_config_error(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"params": {"n_grid": []}})
    assert run(["rate", "--config", cfg, "--out", str(tmp_path)]) == 1
    rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rec["error"] == "ConfigInvalid" and rec["exit_status"] == 1


@pytest.mark.parametrize(
    "params",
    [{"n_grid": [64, 32]}, {"n_grid": [1.5]}, {"quad_rtol": 0}, {"delta": 2}],
)
def test_invalid_params(tmp_path, params):
    cfg = write_cfg(tmp_path, {"params": params})
    assert run(["rate", "--config", cfg, "--out", str(tmp_path)]) == 1


def test_numerical_failure_exit_2(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"model": {"kernel": [[0.5, 0.5], [0.5, 0.5]], "observable": [1, 1]}})
    assert run(["martingale", "--config", cfg, "--out", str(tmp_path)]) == 2
    rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rec["error"] == "DegenerateVariance"


def test_missing_seed_for_mc(tmp_path):
    cfg = write_cfg(tmp_path, {"model": {"catalog": "ar1_scalar"}, "params": {"samples": 100}})
    assert run(["condition-star", "--config", cfg, "--out", str(tmp_path)]) == 1
    assert run(["condition-star", "--config", cfg, "--out", str(tmp_path), "--seed", "4"]) == 0


def test_env_overrides_out(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path, {"params": {}})
    target = tmp_path / "env"
    monkeypatch.setenv("CLTLAB_OUT", str(target))
    assert run(["doeblin", "--config", cfg, "--out", str(tmp_path / "flag"), "--format", "json"]) == 0
    assert (target / "doeblin.json").exists() and not (tmp_path / "flag").exists()


@pytest.mark.parametrize("command", ["spectral", "poisson", "martingale", "charfn", "integral"])
def test_commands_run(tmp_path, command):
    cfg = write_cfg(tmp_path, {"params": {"n_grid": [16, 64]}})
    assert run([command, "--config", cfg, "--out", str(tmp_path), "--svg"]) == 0
    assert (tmp_path / f"{command}.csv").exists()


def test_bad_config_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert run(["poisson", "--config", str(p)]) == 1


def test_report_contracts(tmp_path):
    with pytest.raises(InputError):
        emit_report({}, "csv", tmp_path / "x.csv")
    res = {"summary": {"a": np.float64(0.1), "b": [1, 2], "c": float("nan")}, "rows": [{"x": 1, "y": 0.5}]}
    path = emit_report(res, "json", tmp_path / "r.json")
    text = open(path).read()
    once = json.loads(text)
    assert json.loads(json.dumps(once)) == once
    assert once["summary"]["c"] is None
    assert json_text(res) == text


def test_console_script(tmp_path):
    r = subprocess.run([sys.executable, "-m", "cltlab.cli", "models"], capture_output=True, text=True)
    assert r.returncode == 0 and "two_state" in r.stdout
