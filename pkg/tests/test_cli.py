import json
import subprocess
import sys

import numpy as np
import pytest

from lightray.cli import main
from lightray.experiments import ExperimentConfig
from lightray.rawio import read_raw


@pytest.fixture
def cfg_path(tmp_path):
    cfg = ExperimentConfig.from_dict({
        "grid": {"nx": 11, "T": 4},
        "solvers": {"landweber": {"max_iters": 20}, "tikhonov": {"max_iters": 10},
                    "fista": {"max_iters": 5, "fista_sweep_size": 2}},
    })
    path = tmp_path / "cfg.toml"
    cfg.save(path)
    return path


def test_phantom(cfg_path, tmp_path):
    out = tmp_path / "p"
    assert main(["phantom", "--config", str(cfg_path), "--out", str(out)]) == 0
    vol, _ = read_raw(out / "x_true.raw")
    assert vol.shape == (4, 11, 11)
    assert len(list((out / "slices" / "true").glob("*.csv"))) == 4


def test_assemble(cfg_path, tmp_path):
    out = tmp_path / "a"
    assert main(["assemble", "--config", str(cfg_path), "--out", str(out)]) == 0
    summary = json.loads((out / "operator.json").read_text())
    assert summary["cols"] == 11 * 11 * 4 and summary["max_row_nnz"] <= 16
    assert (out / "operator.mtx").exists() and (out / "rays.csv").exists()
    out2 = tmp_path / "a2"
    assert main(["assemble", "--config", str(cfg_path), "--out", str(out2), "--no-matrix"]) == 0
    assert not (out2 / "operator.mtx").exists()


@pytest.mark.parametrize("method", ["landweber", "tikhonov", "gen-tikhonov"])
def test_solve_single(cfg_path, tmp_path, method, capsys):
    out = tmp_path / method
    assert main(["solve", "--config", str(cfg_path), "--out", str(out), "--method", method,
                 "--seed", "4", "--threads", "1"]) == 0
    assert method in capsys.readouterr().out
    assert json.loads((out / "manifest.json").read_text())["seed"] == 4


def test_solve_all_then_report(cfg_path, tmp_path, capsys):
    out = tmp_path / "all"
    assert main(["solve", "--config", str(cfg_path), "--out", str(out), "--method", "all"]) == 0
    capsys.readouterr()
    assert main(["report", "--run", str(out)]) == 0
    text = capsys.readouterr().out
    for m in ("landweber", "fista", "tikhonov"):
        assert m in text


def test_analyze(tmp_path, capsys):
    out = tmp_path / "an"
    assert main(["analyze", "--out", str(out), "--n", "2", "--trials", "5"]) == 0
    res = json.loads((out / "analysis.json").read_text())
    assert res["stability_estimate"] > 0
    assert len(res["artefact_lines"]) == 4
    assert (out / "artefact_lines.csv").exists()
    assert main(["analyze", "--out", str(out), "--n", "3", "--trials", "3"]) == 0
    assert json.loads((out / "analysis.json").read_text())["stability_estimate"] == pytest.approx(2 * np.pi)


@pytest.mark.parametrize("body", [
    "[grid]\nnx = 1\n[solvers.landweber]\n",
    "[colour]\nx = 1\n[solvers.landweber]\n",
    "[grid\n",
])
def test_config_errors_exit_2(tmp_path, body):
    p = tmp_path / "bad.toml"
    p.write_text(body)
    assert main(["phantom", "--config", str(p), "--out", str(tmp_path)]) == 2


def test_missing_config_and_report(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "nope.toml"), "--out", str(tmp_path)]) == 2
    assert main(["report", "--run", str(tmp_path / "empty")]) == 2
    assert main(["solve", "--seed", "-1", "--out", str(tmp_path)]) == 2
    assert main(["phantom", "--threads", "0", "--out", str(tmp_path)]) == 2


def test_numerical_failure_exit_3(tmp_path):
    p = tmp_path / "zero.toml"
    p.write_text('[grid]\nnx = 9\nT = 3\n[phantom]\nkind = "zero"\n[solvers.landweber]\n')
    assert main(["solve", "--config", str(p), "--out", str(tmp_path / "o")]) == 3


def test_console_script(tmp_path):
    r = subprocess.run([sys.executable, "-m", "lightray.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("lightray ")
    r = subprocess.run([sys.executable, "-m", "lightray.cli", "solve", "--method", "sirt"],
                       capture_output=True, text=True)
    assert r.returncode == 2
