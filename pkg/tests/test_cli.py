import json

import yaml

from cgst.cli import main
from tests.test_scenarios import SMALL_SOIL


def test_presets_listing(capsys):
    assert main(["presets"]) == 0
    out = capsys.readouterr().out.split()
    assert "verify-1d" in out and "soil-2d-desk" in out


def test_run_from_config(tmp_path, capsys):
    cfg = tmp_path / "soil.yaml"
    cfg.write_text(yaml.safe_dump({"scenario": "soil-1d", "seed": 2, "params": SMALL_SOIL}))
    assert main(["soil-1d", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
    info = json.loads(capsys.readouterr().out)
    assert set(info["files"]) == {"profiles.csv", "metrics.csv", "flow.csv"}
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 2


def test_seed_flag_overrides(tmp_path):
    cfg = tmp_path / "soil.yaml"
    cfg.write_text(yaml.safe_dump({"scenario": "soil-1d", "seed": 2, "params": SMALL_SOIL}))
    assert main(["soil-1d", "--config", str(cfg), "--seed", "9", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "manifest.json").read_text())["seeds"] == [9]


def test_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text(yaml.safe_dump({"scenario": "soil-1d", "params": {"tau": -0.1}}))
    assert main(["soil-1d", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "params." in capsys.readouterr().err


def test_scenario_mismatch_is_config_error(tmp_path):
    assert main(["verify-1d", "--preset", "soil-1d", "--out", str(tmp_path)]) == 2


def test_solver_failure_exit_code(tmp_path, capsys):
    cfg = tmp_path / "soil.yaml"
    cfg.write_text(yaml.safe_dump({"scenario": "soil-1d", "params": {**SMALL_SOIL, "max_iter": 1}}))
    assert main(["soil-1d", "--config", str(cfg), "--out", str(tmp_path)]) == 3
    assert "did not converge" in capsys.readouterr().err
