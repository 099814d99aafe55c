import json

import pytest

from firewatch.cli import EXIT_INSUFFICIENT, EXIT_INVALID, EXIT_OK, main
from firewatch.config import default_config
from firewatch.harness import COLUMNS


def write_config(path, **over):
    base = dict(areas=[{"center": [100, 100], "n_spots": [5, 6]}], uavs={"count": 3, "v_max": 40.0},
                planner={"mc_samples": 64}, sim={"steps": 8})
    base.update(over)
    path.write_text(default_config(seed=1, **base).to_json())
    return path


def test_simulate_writes_outputs(tmp_path):
    cfg = write_config(tmp_path / "cfg.json")
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == ",".join(COLUMNS) and len(lines) == 9
    summary = json.loads((out / "summary.json").read_text())
    assert summary["schema_version"] == 1 and summary["steps"] == 8
    assert (out / "plots" / "cumulative_residual.svg").read_text().startswith("<svg")


def test_simulate_seed_override_changes_output(tmp_path):
    cfg = write_config(tmp_path / "cfg.json")
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "99"])
    a = (tmp_path / "a" / "metrics.csv").read_text()
    b = (tmp_path / "b" / "metrics.csv").read_text()
    assert a != b
    assert json.loads((tmp_path / "b" / "summary.json").read_text())["config"]["sim"]["seed"] == 99


def test_simulate_invalid_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"sim": {"seed": 1}, "uavs": {"v_max": -1}}))
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_INVALID
    assert "uavs.v_max" in capsys.readouterr().err


def test_simulate_insufficient_agents(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", areas=[{"center": [50, 50]}, {"center": [450, 450]}],
                       uavs={"count": 1, "v_max": 5.0})
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == EXIT_INSUFFICIENT
    assert (out / "metrics.csv").exists()


def test_bounds_command(capsys):
    assert main(["bounds", "--case", "1", "--path-len", "100", "--v", "500"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out) == {"case": 1, "t_ub": 0.4, "feasible": True}
    main(["bounds", "--case", "2", "--path-len", "50", "--v", "500", "--zeta", "0.1", "--nq", "2", "--literal"])
    assert json.loads(capsys.readouterr().out)["t_ub"] == pytest.approx(0.13333333333333333)
    main(["bounds", "--case", "2", "--path-len", "50", "--v", "500", "--zeta", "0.3", "--nq", "2", "--literal"])
    assert json.loads(capsys.readouterr().out) == {"case": 2, "t_ub": "inf", "feasible": False}
    assert main(["bounds", "--case", "3", "--path-len", "20", "--v", "10", "--zeta", "0.01", "--nq", "2"]) \
        == EXIT_INVALID


def test_unknown_experiment(capsys):
    assert main(["experiment", "nope"]) == EXIT_INVALID
    assert "uav_requirements" in capsys.readouterr().err


def test_experiment_command(tmp_path):
    out = tmp_path / "exp"
    grid = json.dumps({"trials": 3, "mc_samples": 256})
    assert main(["experiment", "tub_tightness", "--out", str(out), "--grid", grid]) == EXIT_OK
    summary = json.loads((out / "tub_tightness_summary.json").read_text())
    assert summary["schema_version"] == 1 and summary["trials"] == 9
    assert len((out / "tub_tightness_trials.csv").read_text().splitlines()) == 10
