import copy
import csv
from pathlib import Path

import numpy as np
import pytest
import yaml

from coisac import cli
from coisac import hbf_solver as hs
from coisac.config import ConfigError, dbm_to_mw, load_config, parse_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _small_raw(iters=30):
    raw = yaml.safe_load((CONFIGS / "scenario1_single_ap.yaml").read_text())
    raw["scene"].update(n_tx=8, n_rx=8)
    raw["solver"]["max_outer_iters"] = iters
    raw["detection"]["mc_trials"] = 20000
    return raw


def _write(tmp_path, raw, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(raw))
    return p


def _read(path):
    lines = Path(path).read_text().splitlines()
    comments = [l for l in lines if l.startswith("#")]
    rows = list(csv.DictReader(l for l in lines if not l.startswith("#")))
    return comments, rows


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.yaml")))
def test_shipped_configs_parse(name):
    cfg = load_config(CONFIGS / name)
    assert len(cfg.specs()) == cfg.scene.n_aps
    assert len(cfg.config_hash) == 16


def test_units_and_hash():
    raw = _small_raw()
    cfg = parse_config(copy.deepcopy(raw))
    assert cfg.beampattern.notch_mw == pytest.approx(1e-3)
    assert cfg.scene.tx_power_budget == pytest.approx(100.0)
    assert dbm_to_mw(-90) == pytest.approx(1e-9)
    raw2 = copy.deepcopy(raw)
    raw2["beampattern"]["gamma"] = 2
    assert parse_config(raw2).config_hash != cfg.config_hash
    assert parse_config(copy.deepcopy(raw), seed_override=9).seed == 9


@pytest.mark.parametrize("mutate, field", [
    (lambda r: r["scene"].update(bogus=1), "scene"),
    (lambda r: r["beampattern"].update(gamma=-1), "beampattern.gamma"),
    (lambda r: r["solver"].update(method="sgd"), "solver.method"),
    (lambda r: r["sweep"].update(variable="n_paths"), "sweep.variable"),
    (lambda r: r["detection"].update(pr_fa=[0.0]), "detection.pr_fa"),
    (lambda r: r["beampattern"].update(notch_mw=1e-3), "beampattern.notch_db"),
])
def test_malformed_config_names_field(tmp_path, capsys, mutate, field):
    raw = _small_raw()
    mutate(raw)
    with pytest.raises(ConfigError) as exc:
        parse_config(copy.deepcopy(raw))
    assert exc.value.field.startswith(field)
    code = cli.main(["design", "--config", str(_write(tmp_path, raw)), "--out", str(tmp_path / "o")])
    assert code == cli.EXIT_CONFIG
    assert field in capsys.readouterr().err


def test_missing_file_and_bad_threads(tmp_path):
    assert cli.main(["design", "--config", str(tmp_path / "nope.yaml")]) == cli.EXIT_CONFIG
    p = _write(tmp_path, _small_raw())
    assert cli.main(["design", "--config", str(p), "--threads", "0"]) == cli.EXIT_CONFIG


def test_design_outputs(tmp_path):
    raw = _small_raw(iters=12)
    out = tmp_path / "o"
    code = cli.main(["design", "--config", str(_write(tmp_path, raw)), "--out", str(out), "--seed", "3"])
    assert code == cli.EXIT_CAP
    comments, rows = _read(out / "diagnostics.csv")
    cfg = parse_config(copy.deepcopy(raw))
    assert comments[0] == f"# config_sha256={cfg.config_hash} seed=3"
    assert len(rows) == 12
    assert list(rows[0]) == ["iter", "al", "wsr", "max_residual", "mse_ap0", "notch_max_ap0", "wall_ms"]
    _, bp = _read(out / "beampattern_ap0.csv")
    assert len(bp) == cli.BEAMPATTERN_POINTS
    db = np.array([float(r["power_db"]) for r in bp])
    assert db.max() == pytest.approx(0.0) and np.all(db <= 0)


def test_design_converged_exit_zero(tmp_path):
    raw = _small_raw(iters=2000)
    code = cli.main(["design", "--config", str(_write(tmp_path, raw)), "--out", str(tmp_path / "o")])
    assert code == cli.EXIT_OK


def test_sweep_single_value_matches_design(tmp_path):
    raw = _small_raw(iters=15)
    raw["sweep"] = {"variable": "gamma", "values": [raw["beampattern"]["gamma"]], "trials": 1}
    p = _write(tmp_path, raw)
    assert cli.main(["sweep", "--config", str(p), "--out", str(tmp_path / "s")]) == cli.EXIT_OK
    assert cli.main(["design", "--config", str(p), "--out", str(tmp_path / "d")]) == cli.EXIT_CAP
    _, srows = _read(tmp_path / "s" / "sweep.csv")
    _, drows = _read(tmp_path / "d" / "diagnostics.csv")
    assert len(srows) == 1
    assert float(srows[0]["wsr"]) == float(drows[-1]["wsr"])
    assert np.isfinite(float(srows[0]["min_sum_sinr"]))


def test_sweep_threads_do_not_change_rows(tmp_path):
    raw = _small_raw(iters=6)
    raw["sweep"] = {"variable": "Gamma_notch", "values": [-35, -25], "trials": 2, "radar_sinr": False}
    p = _write(tmp_path, raw)
    cli.main(["sweep", "--config", str(p), "--out", str(tmp_path / "a")])
    cli.main(["sweep", "--config", str(p), "--out", str(tmp_path / "b"), "--threads", "3"])
    _, a = _read(tmp_path / "a" / "sweep.csv")
    _, b = _read(tmp_path / "b" / "sweep.csv")
    assert [r["wsr"] for r in a] == [r["wsr"] for r in b]
    assert len(a) == 4


def test_roc_zero_sinr_is_chance_line(tmp_path):
    raw = _small_raw()
    raw["detection"].update(sinr_source="fixed", sum_sinr=0.0, pr_fa=[0.01, 0.1, 0.3])
    out = tmp_path / "r"
    assert cli.main(["roc", "--config", str(_write(tmp_path, raw)), "--out", str(out)]) == cli.EXIT_OK
    _, rows = _read(out / "roc.csv")
    for r in rows:
        assert float(r["pr_d_analytic"]) == pytest.approx(float(r["pr_fa"]), rel=1e-9)
        assert abs(float(r["pr_d_mc"]) - float(r["pr_fa"])) < 4 * float(r["mc_stderr"]) + 1e-3


def test_roc_monotone_and_detect_mc(tmp_path):
    raw = _small_raw()
    raw["detection"].update(sinr_source="fixed", sum_sinr=8.0)
    p = _write(tmp_path, raw)
    assert cli.main(["roc", "--config", str(p), "--out", str(tmp_path / "r")]) == cli.EXIT_OK
    _, rows = _read(tmp_path / "r" / "roc.csv")
    pd = [float(r["pr_d_analytic"]) for r in rows]
    assert pd == sorted(pd) and all(float(r["pr_fa"]) <= d for r, d in zip(rows, pd))
    assert cli.main(["detect-mc", "--config", str(p), "--out", str(tmp_path / "m")]) == cli.EXIT_OK
    _, rows = _read(tmp_path / "m" / "detect_mc.csv")
    for r in rows:
        assert abs(float(r["pr_fa_mc"]) - float(r["pr_fa"])) < 5 * float(r["pr_fa_stderr"]) + 1e-4


def test_infeasible_exit_code(tmp_path, monkeypatch, capsys):
    def boom(state, info=None):
        raise hs.InfeasibleSubproblem("budget below minimum", min_mse=3.5)

    monkeypatch.setattr(hs, "update_U", boom)
    p = _write(tmp_path, _small_raw())
    assert cli.main(["design", "--config", str(p), "--out", str(tmp_path / "o")]) == cli.EXIT_INFEASIBLE
    err = capsys.readouterr().err
    assert "AP 0" in err and "3.5" in err
