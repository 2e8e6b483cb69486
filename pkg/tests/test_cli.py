from pathlib import Path

import pytest

from isopyc.cli import EXIT_BLOWUP, EXIT_CONFIG, EXIT_OK, execute_run, main
from isopyc.config import load_config
from isopyc.snapshot import read_energy_csv, read_snapshot

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_equilibrium_run(tmp_path, capsys):
    out = tmp_path / "eq"
    code = main(["--config", str(CONFIGS / "equilibrium.cfg"), "--output", str(out), "run"])
    assert code == EXIT_OK
    assert "completed" in capsys.readouterr().out
    rows = read_energy_csv(out / "energy.csv")
    assert rows[0]["t"] == 0 and rows[-1]["t"] == pytest.approx(1.0)
    assert max(r["E"] for r in rows) < 1e-20
    assert all(r["status"] == "healthy" for r in rows)
    assert read_snapshot(out / "final.bin").t == pytest.approx(1.0)
    assert load_config(out / "config.cfg")["params.mu"] == 0.25


def test_blowup_run(tmp_path):
    cfg = load_config(CONFIGS / "steepening.cfg")
    res = execute_run(cfg, tmp_path / "bu")
    assert res.exit_code == EXIT_BLOWUP
    assert res.final_report.blown_up and res.last_finite
    rows = read_energy_csv(tmp_path / "bu" / "energy.csv")
    assert rows[-1]["status"] == "blown_up"
    assert rows[-1]["min_jacobian"] < cfg["params.h_star"]
    assert "blown_up" in (tmp_path / "bu" / "report.txt").read_text()


def test_bad_key(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("grid.Nr = 17\nparams.viscosity = 1\n")
    assert main(["--config", str(path), "run"]) == EXIT_CONFIG
    assert "params.viscosity" in capsys.readouterr().err


def test_bad_threads(capsys):
    assert main(["--threads", "0", "run"]) == EXIT_CONFIG


def test_unknown_suite(capsys):
    assert main(["verify", "nonsense"]) == EXIT_CONFIG
    assert "unknown suite" in capsys.readouterr().err


def test_verify_identities(capsys):
    assert main(["verify", "identities"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "checks passed" in out and "FAIL" not in out
