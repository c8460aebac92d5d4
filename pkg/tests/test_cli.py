import json
import subprocess
import sys

import pytest

from quadobs.cli import cli_main
from quadobs.harness import read_csv


def run(argv, capsys):
    code = cli_main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_simulate_no_attack_is_deterministic(tmp_path, capsys):
    for d in ("a", "b"):
        code, out, _ = run(["simulate", "--seed", "42", "--no-attack", "--out", str(tmp_path / d)], capsys)
        assert code == 0 and "trial_0000.csv" in out
    for name in ("trial_0000.csv", "trial_0000_detections.csv", "trial_0000_trajectories.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    cfg = json.loads((tmp_path / "a" / "config.json").read_text())
    assert cfg["master_seed"] == 42 and cfg["game"]["attack"]["beta"] == 0.0


def test_experiment_single_trial_has_zero_se(tmp_path, capsys):
    code, _, _ = run(["experiment", "--trials", "1", "--out", str(tmp_path)], capsys)
    assert code == 0
    header, data = read_csv(tmp_path / "aggregate.csv")
    for col in ("mse_linear_se", "mse_quadratic_se"):
        assert (data[:, header.index(col)] == 0).all()
    assert (tmp_path / "mse.svg").exists() and (tmp_path / "mmd.svg").exists()


def test_config_file_and_flags(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"M": 2, "B": 50, "game": {"horizon": 12}}))
    code, _, _ = run(["experiment", "--config", str(cfg), "--beta", "3", "--attack-step", "5",
                      "--control-estimator", "quadratic", "--no-svg", "--save-trials",
                      "--out", str(tmp_path / "o")], capsys)
    assert code == 0
    echoed = json.loads((tmp_path / "o" / "config.json").read_text())
    assert echoed["game"]["attack"] == {"onset": 5, "beta": 3.0}
    assert echoed["control_estimator"] == "quadratic"
    assert len(list((tmp_path / "o" / "trials").glob("trial_*_detections.csv"))) == 2


def test_out_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("QUADOBS_OUT", str(tmp_path / "env"))
    code, _, _ = run(["simulate", "--no-svg"], capsys)
    assert code == 0 and (tmp_path / "env" / "trial_0000.csv").exists()


def test_detect_on_exported_csv(tmp_path, capsys):
    assert run(["simulate", "--no-svg", "--out", str(tmp_path)], capsys)[0] == 0
    code, out, _ = run(["detect", str(tmp_path / "trial_0000.csv"), "--B", "100",
                        "--out", str(tmp_path / "det")], capsys)
    assert code == 0
    assert out.count("k=") == 12
    header, data = read_csv(tmp_path / "det" / "detections.csv")
    assert data.shape == (12, len(header))


def test_check_fast_suites(capsys):
    code, out, _ = run(["check", "--suite", "kalman", "--suite", "jacobian", "--suite", "mmd"], capsys)
    assert code == 0
    assert "3/3 suites passed" in out


@pytest.mark.parametrize("argv", [[], ["bogus"], ["simulate", "--frobnicate"],
                                  ["simulate", "--control-estimator", "psychic"],
                                  ["experiment", "--trials", "x"]])
def test_usage_errors_exit_one(argv, capsys):
    assert run(argv, capsys)[0] == 1


def test_bad_config_exits_one(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text('{"nonsense": 1}')
    code, _, err = run(["simulate", "--config", str(p)], capsys)
    assert code == 1 and "unknown" in err
    code, _, _ = run(["detect", str(tmp_path / "missing.csv")], capsys)
    assert code == 1


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "quadobs", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("simulate", "experiment", "detect", "check"):
        assert cmd in res.stdout
