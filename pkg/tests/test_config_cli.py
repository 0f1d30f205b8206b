import csv
import json

import pytest
import yaml

from fracdrift import cli
from fracdrift.barrier import BarrierKit
from fracdrift.config import (
    STOCK, STOCK_BATTERY, ConfigInvalid, HypothesisRejected, config_hash, dump, load, validate,
    with_seed,
)

KIT_S05 = BarrierKit(0.5, 1.0, 1.0, 0.12566053148961803, 0.05, 0.01778279410038923, beta1=0.4658)


@pytest.fixture
def kit_file(tmp_path):
    path = tmp_path / "kit.json"
    KIT_S05.write(path)
    return path


def _with_kit(sid, kit_file, **extra):
    cfg = dict(STOCK[sid].overrides, scenario=sid, kit={"source": "file", "path": str(kit_file)})
    cfg.update(extra)
    return cfg


@pytest.mark.parametrize("raw, where", [
    ({"s": 1.0}, "s"),
    ({"s": 0.0}, "s"),
    ({"grid": {"n_points": 1000}}, "grid.n_points"),
    ({"eps_visc": [0.0, 0.1]}, "eps_visc"),
    ({"eps_visc": []}, "eps_visc"),
    ({"drift": {"kind": "wild"}}, "drift.kind"),
    ({"bogus": 1}, "bogus"),
    ({"kit": {"source": "file"}}, "kit.path"),
    ({"t_span": [0.0, 0.5]}, "t_span"),
    ({"analysis": {"K": 2}}, "analysis.K"),
])
def test_validate_rejects(raw, where):
    with pytest.raises(ConfigInvalid) as err:
        validate(raw)
    assert err.value.path == where


def test_rough_drift_rejected_below_half():
    with pytest.raises(HypothesisRejected):
        validate({"s": 0.25, "drift": {"kind": "rough_bounded"}})
    validate({"s": 0.25, "drift": {"kind": "holder"}})


def test_stock_scenarios_roundtrip(tmp_path):
    assert len(STOCK) == 7
    for sid, sc in STOCK.items():
        cfg = sc.config()
        dump(cfg, tmp_path / f"{sid}.yaml")
        back = load(tmp_path / f"{sid}.yaml")
        assert back == cfg and config_hash(back) == config_hash(cfg)
    assert "supercritical_nogauge" not in STOCK_BATTERY


def test_with_seed_changes_hash():
    cfg = STOCK["critical_rough"].config()
    assert config_hash(with_seed(cfg, 11)) != config_hash(cfg)


def test_heat_reference_run(tmp_path, kit_file):
    report, code, out = cli.run(_with_kit("heat_reference", kit_file), tmp_path)
    assert code == cli.EXIT_OK
    run0 = report["runs"][0]
    assert run0["fit"]["alpha_hat"] >= 0.9
    for name in ("report.json", "kit.json", "decay.csv", "trajectory.bin"):
        assert (out / name).exists()
    rows = list(csv.DictReader(open(out / "decay.csv")))
    assert len(rows) == report["config"]["analysis"]["K"] + 1


def test_constant_state_run(tmp_path, kit_file):
    report, code, _ = cli.run(_with_kit("constant_state", kit_file), tmp_path, write_trajectory=False)
    assert code == cli.EXIT_OK
    run0 = report["runs"][0]
    assert run0["normalization"]["degenerate"]
    assert all(o == 0 for o in run0["iteration"]["oscillations"])


def test_run_is_deterministic(tmp_path, kit_file):
    cfg = _with_kit("heat_reference", kit_file)
    a, _, _ = cli.run(cfg, tmp_path / "a", write_trajectory=False)
    b, _, _ = cli.run(cfg, tmp_path / "b", write_trajectory=False)
    a.pop("timing"), b.pop("timing")
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_battery_collects_errors(tmp_path, kit_file):
    good = _with_kit("constant_state", kit_file)
    bad = {"scenario": "broken", "s": 0.25, "drift": {"kind": "rough_bounded"}}
    rows, reports = cli.run_battery([good, bad], tmp_path, write_trajectory=False)
    assert rows[0]["exit_code"] == cli.EXIT_OK and rows[0]["error"] == ""
    assert rows[1]["exit_code"] == cli.EXIT_HYPOTHESIS and "Hoelder" in rows[1]["error"]
    assert reports[1] is None
    summary = list(csv.DictReader(open(tmp_path / "summary.csv")))
    assert [r["scenario"] for r in summary] == ["constant_state", "broken"]
    assert tuple(summary[0]) == cli.SUMMARY_COLUMNS


def test_cli_main_run_and_exit_codes(tmp_path, kit_file, capsys):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(_with_kit("constant_state", kit_file)))
    code = cli.main(["run", "--config", str(path), "--out", str(tmp_path / "o"), "--no-trajectory"])
    assert code == cli.EXIT_OK
    path.write_text(yaml.safe_dump({"s": 0.25, "drift": {"kind": "rough_bounded"}}))
    assert cli.main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == cli.EXIT_HYPOTHESIS


def test_cli_scenarios_listing(capsys):
    assert cli.main(["scenarios"]) == 0
    out = capsys.readouterr().out
    for sid in STOCK:
        assert sid in out
