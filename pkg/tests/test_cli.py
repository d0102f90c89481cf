import json
import subprocess
import sys

import pytest

from mvpose.cli import main


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    assert main(["gen", "--scenes", "10", "--seed", "1", "--out", str(out)]) == 0
    return out


def test_gen_estimate_eval_curve(data, tmp_path, capsys):
    est = tmp_path / "est"
    assert main(["estimate", str(data), "--out", str(est), "--views", "1", "--sigma-offsets", "0.005"]) == 0
    assert len(list((est / "estimates").glob("*.json"))) == 3
    run = json.loads((est / "run.json").read_text())
    assert run["config"]["offset_sigma"] == 0.005 and run["config"]["views"] == 1
    assert main(["eval", str(est / "estimates"), str(data), "--out", str(tmp_path / "ev")]) == 0
    assert "ALL" in capsys.readouterr().out
    assert main(["curve", str(tmp_path / "ev" / "report.json"), "--out", str(tmp_path / "cv")]) == 0
    assert (tmp_path / "cv" / "curves.png").exists()


def test_config_file_and_overrides(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"scene_count": 1, "samples_per_view": 1024, "seed": 3}))
    out = tmp_path / "abl"
    assert main(["ablate-views", "--config", str(cfg), "--seed", "4", "--out", str(out)]) == 0
    run = json.loads((out / "run.json").read_text())
    assert run["config"]["seed"] == 4 and run["config"]["samples_per_view"] == 1024
    out = tmp_path / "wig"
    assert main(["wiggle-sweep", "--config", str(cfg), "--sigma-wiggle", "0,0.004", "--out", str(out)]) == 0
    assert (out / "wiggle.csv").read_text().count("\n") == 3


def test_sigma_wiggle_switches_rig(tmp_path):
    out = tmp_path / "g"
    assert main(["gen", "--scenes", "1", "--sigma-wiggle", "0.003", "--out", str(out)]) == 0
    assert json.loads((out / "index.json").read_text())["rig"] == {"type": "WiggleRing", "position_sigma": 0.003}


def test_config_errors_exit_2(tmp_path, capsys):
    assert main(["gen", "--views", "5", "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"scene_count": 1, "colour": 1}))
    assert main(["gen", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["gen", "--config", str(tmp_path / "missing.json")]) == 2
    assert "config error" in capsys.readouterr().err


def test_data_errors_exit_3(data, tmp_path, capsys):
    assert main(["estimate", str(tmp_path / "nowhere"), "--out", str(tmp_path / "o")]) == 3
    assert main(["eval", str(tmp_path), str(data), "--out", str(tmp_path / "e")]) == 3
    assert main(["curve", str(tmp_path / "none.json"), "--out", str(tmp_path / "c")]) == 3
    assert "data error" in capsys.readouterr().err


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "mvpose.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("gen", "estimate", "eval", "ablate-views", "wiggle-sweep", "curve"):
        assert cmd in res.stdout
