import csv
import json

import numpy as np
import pytest
import yaml

from cgst.lattice import ConfigurationError
from cgst.scenarios import (
    COEF_COLUMNS,
    FLOW_COLUMNS,
    METRIC_COLUMNS,
    PROFILE_COLUMNS,
    SCENARIOS,
    ScenarioConfig,
    list_presets,
    load_config,
    load_preset,
    run_ensemble,
    run_scenario,
    run_sweep,
)

SMALL_SOIL = dict(
    height=3.0, T=1.2, dz=0.05, dt=0.02, D=0.001, a=0.1, tau=0.2, times=[0.4, 0.8],
    field=dict(variance=0.5, corr_length=0.1, modes=100),
    reaction=dict(alpha1=5.0, alpha2=0.5, M1=0.1, M2=0.1), max_iter=5000,
)

SMALL_AQUIFER = dict(
    length=1.0, T=0.3, U=1.0, D=0.01, dx=0.01, dt=0.0025, a=0.03, tau=0.05, times=[0.1, 0.2],
    field=dict(variance=0.1, corr_length=0.01, modes=100),
    reaction=dict(alpha1=5.0, alpha2=0.5, M1=0.1, M2=0.1),
)


def header(path):
    with open(path) as fh:
        return next(csv.reader(fh))


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_every_scenario_has_a_preset():
    names = list_presets()
    for s in SCENARIOS:
        assert s in names
        assert load_preset(s)["scenario"] == s
    for desk in ("aquifer-1d-desk", "soil-2d-desk", "aquifer-2d-desk"):
        assert desk in names
    for name in names:
        load_config(name)  # all presets validate


def test_validation_names_the_field():
    with pytest.raises(ConfigurationError, match="params.dx"):
        ScenarioConfig("bimolecular-1d", {"u": 1.0}).validate() if False else load_config(
            None, None, scenario="bimolecular-1d", params={"u": 1.0, "D": 0.01, "K_r": 0.1, "dt": 1e-3, "T": 1.0,
                                                          "a": 0.03, "tau": 0.1, "times": [0.5]})
    with pytest.raises(ConfigurationError, match="scenario"):
        ScenarioConfig("nope").validate()
    with pytest.raises(ConfigurationError, match="mode"):
        ScenarioConfig("soil-1d", dict(SMALL_SOIL), mode="fast").validate()
    with pytest.raises(ConfigurationError, match="times"):
        ScenarioConfig("soil-1d", {**SMALL_SOIL, "times": [0.1]}).validate()
    with pytest.raises(ConfigurationError, match="unknown config keys"):
        load_config("soil-1d", colour="blue")
    with pytest.raises(ConfigurationError, match="unknown preset"):
        load_config("nope")


def test_config_file_merges_over_preset(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({"params": {"tau": 0.05}}))
    cfg = load_config("bimolecular-1d", path)
    assert cfg.params["tau"] == 0.05 and cfg.params["K_r"] == 0.1


def test_verify_small_and_schema(tmp_path):
    cfg = load_config("verify-1d", params={**load_preset("verify-1d")["params"], "dx_list": [5e-3]})
    res, manifest = run_scenario(cfg, tmp_path)
    assert header(tmp_path / "coefficients.csv") == COEF_COLUMNS
    rows = read_rows(tmp_path / "coefficients_summary.csv")
    assert {r["scheme"] for r in rows} == {"bgrw", "grw"}
    for r in rows:
        assert float(r["D_mean"]) == pytest.approx(1e-4, rel=1e-6)
        assert float(r["u_mean"]) == pytest.approx(1.0, rel=1e-6)
    assert manifest["files"] == ["coefficients.csv", "coefficients_summary.csv"]
    assert json.loads((tmp_path / "manifest.json").read_text())["version"]


def test_soil_outputs_deterministic_and_round_trip(tmp_path):
    cfg = ScenarioConfig("soil-1d", dict(SMALL_SOIL), seed=3).validate()
    run_scenario(cfg, tmp_path / "a")
    run_scenario(cfg, tmp_path / "b")
    for name in ("profiles.csv", "metrics.csv", "flow.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert header(tmp_path / "a" / "metrics.csv") == METRIC_COLUMNS
    assert header(tmp_path / "a" / "profiles.csv") == ["label"] + PROFILE_COLUMNS
    assert header(tmp_path / "a" / "flow.csv") == FLOW_COLUMNS
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["solver"]["flow_iterations"]["min"] >= 1
    again = ScenarioConfig(**manifest["config"])
    run_scenario(again, tmp_path / "c")
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "c" / "metrics.csv").read_bytes()


def test_floats_use_17_digits(tmp_path):
    cfg = ScenarioConfig("soil-1d", dict(SMALL_SOIL), seed=3).validate()
    run_scenario(cfg, tmp_path)
    row = read_rows(tmp_path / "metrics.csv")[0]
    v = row["e_c1"]
    assert float("%.17g" % float(v)) == float(v) and v == "%.17g" % float(v)


def test_degenerate_sweep_matches_scenario():
    cfg = ScenarioConfig("sweep-appendix-b", {**SMALL_SOIL, "tau_list": [0.2], "a_list": [0.1]}, seed=3).validate()
    sweep = run_sweep(cfg)
    plain, _ = run_scenario(ScenarioConfig("soil-1d", dict(SMALL_SOIL), seed=3))
    srows = sweep.tables["sweep"][1]
    prow = plain.tables["metrics"][1]
    assert len(srows) == len(prow) == 2
    for s, p in zip(srows, prow):
        assert s[2:] == p[1:]


def test_ensemble_of_one_matches_single_run():
    cfg = ScenarioConfig("aquifer-1d", dict(SMALL_AQUIFER), seed=4).validate()
    one, _ = run_ensemble(cfg, 1)
    single, _ = run_scenario(cfg)
    assert one.tables["metrics"] == single.tables["metrics"]
    assert np.array_equal(one.data["runs"][0]["cgst"], single.data["runs"][0]["cgst"])


def test_zero_variance_ensemble_has_zero_spread():
    p = {**SMALL_AQUIFER, "field": {"variance": 0.0, "corr_length": 0.01}}
    res, _ = run_ensemble(ScenarioConfig("aquifer-1d", p, seed=0).validate(), 3)
    runs = res.data["runs"]
    assert all(np.array_equal(r["cgst"], runs[0]["cgst"]) for r in runs)
    assert np.all(res.data["cgst_std"] <= 1e-15 * np.abs(runs[0]["cgst"]).max())
    assert res.info["seeds"] == [0, 1, 2]


def test_ensemble_rejected_for_fixed_fields():
    with pytest.raises(ConfigurationError):
        run_ensemble(load_config("verify-1d"), 2)


def test_stochastic_aquifer_close_to_deterministic():
    p = {**SMALL_AQUIFER, "particles_per_mole": 1e12}
    sto, _ = run_scenario(ScenarioConfig("aquifer-1d", p, mode="stoch", seed=2).validate())
    det, _ = run_scenario(ScenarioConfig("aquifer-1d", p, seed=2).validate())
    a, b = sto.data["runs"][0]["cgst"], det.data["runs"][0]["cgst"]
    assert np.linalg.norm(a - b) <= 1e-4 * np.linalg.norm(b)
