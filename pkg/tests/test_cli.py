import json
import os

import numpy as np
import pytest

from tactile_placement.cli import main

TINY_CFG = """
[learner]
envs = 4
horizon = 16
epochs = 2
hidden_in = 32
hidden_rec = 16
minibatches = 2
checkpoint_every = 0
[env]
episode_limit = 24
[sweep]
seeds_per_config = 1
"""


@pytest.fixture()
def tiny_cfg(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_CFG)
    return str(path)


def test_version_flag(capsys):
    assert main(["--version"]) == 0
    assert capsys.readouterr().out.strip() == "tpl 0.1.0"


def test_unknown_subcommand_exits_1(capsys):
    assert main(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_exits_1(capsys):
    assert main(["train", "--bogus"]) == 1


def test_no_command_exits_1(capsys):
    assert main([]) == 1


def test_report_on_empty_dir_exits_1(tmp_path, capsys):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["report", str(empty), "--out", str(tmp_path / "rep")]) == 1
    assert "analysis.json" in capsys.readouterr().err


def test_bad_config_exits_1(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[learner]\nenvz = 2\n")
    assert main(["train", "--config", str(bad), "--seed", "1"]) == 1


def test_train_same_seed_identical_curve_files(tiny_cfg, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["train", "--config", tiny_cfg, "--seed", "7", "--out", str(a)]) == 0
    assert main(["train", "--config", tiny_cfg, "--seed", "7", "--out", str(b)]) == 0
    assert (a / "curve.csv").read_bytes() == (b / "curve.csv").read_bytes()
    assert (a / "curve.csv").read_text().startswith("epoch,mean_return")


def test_simulate_writes_trace(tiny_cfg, tmp_path, capsys):
    out = tmp_path / "trace.csv"
    assert main([
        "simulate", "--config", tiny_cfg, "--seed", "3", "--steps", "20",
        "--script", "curl", "--out", str(out),
    ]) == 0
    rows = out.read_text().strip().splitlines()
    assert rows[0].startswith("step,time,d,r,reward,terminated")
    assert rows[0].count("f_") == 19
    assert len(rows) >= 2


def test_simulate_replay_from_episode_log(tiny_cfg, tmp_path):
    log = tmp_path / "episodes.jsonl"
    rec = {"seed": 42, "config_bitmask": 0b11111, "goals_completed": 0,
           "termination": "timeout", "steps": 10, "return": -1.0}
    log.write_text(json.dumps(rec) + "\n")
    out = tmp_path / "trace.csv"
    assert main([
        "simulate", "--config", tiny_cfg, "--replay", str(log), "--index", "0",
        "--steps", "5", "--out", str(out),
    ]) == 0
    assert out.exists()
    assert main([
        "simulate", "--config", tiny_cfg, "--replay", str(log), "--index", "9",
        "--out", str(out),
    ]) == 1  # index out of range -> validation error


def test_sweep_b1_then_analyze_confirms_zero_tactile(tiny_cfg, tmp_path, capsys):
    out = tmp_path / "sweep_b1"
    assert main(["sweep", "--experiment", "B1", "--config", tiny_cfg, "--out", str(out)]) == 0
    # every logged episode carries the zero bitmask
    runs = os.listdir(out / "runs")
    assert runs
    for run in runs:
        for line in (out / "runs" / run / "episodes.jsonl").read_text().splitlines():
            assert json.loads(line)["config_bitmask"] == 0
        summary = json.loads((out / "runs" / run / "summary.json").read_text())
        assert summary["max_tactile_abs"] == 0.0
    assert main(["analyze", str(out)]) == 0
    analysis = json.loads((out / "analysis" / "analysis.json").read_text())
    assert analysis["experiment"] == "B1"
    assert list(analysis["configs"]) == ["B1"]


def test_sweep_resume_skips_completed(tiny_cfg, tmp_path, capsys):
    out = tmp_path / "sweep"
    assert main(["sweep", "--experiment", "B2", "--config", tiny_cfg, "--out", str(out)]) == 0
    assert main(["sweep", "--experiment", "B2", "--config", tiny_cfg, "--out", str(out),
                 "--resume"]) == 0
    assert "1 skipped" in capsys.readouterr().out


def test_simulate_with_checkpoint_policy(tiny_cfg, tmp_path):
    run_dir = tmp_path / "run"
    assert main(["train", "--config", tiny_cfg, "--seed", "1", "--out", str(run_dir)]) == 0
    out = tmp_path / "trace.csv"
    assert main([
        "simulate", "--config", tiny_cfg, "--seed", "2", "--steps", "10",
        "--checkpoint", str(run_dir / "checkpoint.npz"), "--out", str(out),
    ]) == 0
    assert len(out.read_text().strip().splitlines()) >= 2
