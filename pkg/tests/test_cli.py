"""Config parsing, grid plumbing, and CLI contract tests."""

from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest

from byzweight.cli import main
from byzweight.config import (
    ConfigError,
    ExperimentConfig,
    parse_config,
    serialize_config,
)
from byzweight.engine import Behavior
from byzweight.experiment import (
    attacker_ids,
    build_clients,
    build_task,
    grid_cells,
    metrics_filename,
    run_grid,
)

SMALL = """
[task]
dim = 6
classes = 3
train_samples = 400
test_samples = 150
clients = 8

[training]
rounds = 4
eta = 0.3
batch_size = 16

[attack]
scenarios = none,negation_single

[seeds]
master = 3
"""


# -------------------------------------------------------------------- config


def test_defaults_round_trip():
    cfg = ExperimentConfig()
    text = serialize_config(cfg)
    assert parse_config(text) == cfg
    assert serialize_config(parse_config(text)) == text


def test_partial_file_fills_defaults():
    cfg = parse_config(SMALL)
    assert cfg.dim == 6 and cfg.clients == 8
    assert cfg.partition_sigma == 3.45
    assert cfg.preprocess_modes == ("passthrough", "truncate", "ignore")
    assert cfg.scenarios == ("none", "negation_single")
    assert serialize_config(parse_config(serialize_config(cfg))) == serialize_config(cfg)


def test_unknown_section_and_key_rejected():
    with pytest.raises(ConfigError):
        parse_config("[nonsense]\nx = 1\n")
    with pytest.raises(ConfigError):
        parse_config("[task]\ndimension = 5\n")
    with pytest.raises(ConfigError):
        parse_config("[task]\ndim = five\n")


def test_invalid_values_rejected():
    with pytest.raises(ConfigError):
        parse_config("[task]\ndim = 3\nclasses = 5\n")
    with pytest.raises(ConfigError):
        parse_config("[preprocess]\nmodes = passthrough,squash\n")
    with pytest.raises(ConfigError):
        parse_config("[attack]\nscenarios = all\n")
    with pytest.raises(ConfigError):
        parse_config("[preprocess]\nalpha = 0\n")
    with pytest.raises(ConfigError):
        parse_config("[aggregator]\nbeta = 0.5\n")
    with pytest.raises(ConfigError):
        parse_config("[training]\neta = 0\n")


def test_clients_per_round_forms():
    assert parse_config("[training]\nclients_per_round =\n").clients_per_round is None
    assert parse_config("[training]\nclients_per_round = 7\n").clients_per_round == 7
    frac = parse_config("[training]\nclients_per_round = 0.5\n").clients_per_round
    assert frac == 0.5 and isinstance(frac, float)


def test_batch_size_forms():
    assert parse_config("[training]\nbatch_size = 32\n").batch_size == 32
    frac = parse_config("[training]\nbatch_size = 0.1\n").batch_size
    assert frac == 0.1 and isinstance(frac, float)
    cfg = parse_config("[training]\nbatch_size = 0.1\n")
    assert parse_config(serialize_config(cfg)).batch_size == 0.1
    with pytest.raises(ConfigError):
        parse_config("[training]\nbatch_size = 1.5\n")


# ---------------------------------------------------------------- experiment


def test_attacker_sets_deterministic_and_sized():
    cfg = parse_config(SMALL)
    single = attacker_ids(cfg, "negation_single")
    assert len(single) == 1
    assert single == attacker_ids(cfg, "label_shift_single")
    group = attacker_ids(cfg, "negation_fraction")
    assert len(group) == max(1, round(0.1 * 8))
    assert attacker_ids(cfg, "none") == frozenset()


def test_build_clients_marks_attackers():
    cfg = parse_config(SMALL)
    shards, test = build_task(cfg)
    assert sum(len(s) for s in shards) == 400
    assert len(test) == 150
    clients = build_clients(cfg, "negation_single", shards)
    liars = [c for c in clients if c.behavior is Behavior.MODEL_NEGATION]
    assert len(liars) == 1
    assert liars[0].declared_size == 10_000_000
    honest = [c for c in clients if c.behavior is Behavior.HONEST]
    assert all(c.declared_size == len(c.data) for c in honest)
    flippers = build_clients(cfg, "label_shift_fraction", shards)
    assert sum(c.behavior is Behavior.LABEL_SHIFT for c in flippers) == 1
    assert [c.behavior for c in build_clients(cfg, "none", shards)] == [
        Behavior.HONEST
    ] * 8


def test_grid_layout_and_filenames():
    cfg = parse_config(SMALL)
    cells = grid_cells(cfg)
    assert len(cells) == 3 * 3 * 2
    assert cells[0] == ("passthrough", "mean", "none")
    assert metrics_filename(*cells[0]) == "metrics_passthrough_mean_none.csv"


def test_run_grid_writes_every_cell(tmp_path):
    cfg = parse_config(SMALL)
    results = run_grid(cfg, out_dir=str(tmp_path), jobs=1)
    assert len(results) == 18
    for r in results:
        path = tmp_path / metrics_filename(r.preprocess, r.aggregator, r.attack)
        lines = path.read_text().splitlines()
        assert lines[0] == "round,test_accuracy,test_loss,aggregate_norm"
        assert len(lines) == 1 + cfg.rounds
    summary = (tmp_path / "summary.csv").read_text().splitlines()
    assert summary[0] == "preprocess,aggregator,attack,final_accuracy"
    assert len(summary) == 19


# ----------------------------------------------------------------------- cli


def write_weights(path, values):
    path.write_text("".join(f"{v}\n" for v in values))


def test_tradeoff_command_golden(tmp_path, capsys):
    wfile = tmp_path / "w.txt"
    write_weights(wfile, [1, 1, 1, 1, 100])
    code = main(["tradeoff", "--weights", str(wfile), "--alpha-star", "0.5"])
    assert code == 0
    assert capsys.readouterr().out == "alpha,u_star\n0.400000,2\n0.200000,4\n"


def test_tradeoff_command_to_directory(tmp_path, capsys):
    wfile = tmp_path / "w.txt"
    write_weights(wfile, [1, 1, 1, 1, 100])
    out = tmp_path / "results"
    code = main(
        ["tradeoff", "--weights", str(wfile), "--alpha-star", "1/2", "--out-dir", str(out)]
    )
    assert code == 0
    assert (out / "tradeoff.csv").read_bytes() == b"alpha,u_star\n0.400000,2\n0.200000,4\n"


def test_tradeoff_uniform_weights_exit_3(tmp_path, capsys):
    wfile = tmp_path / "w.txt"
    write_weights(wfile, [5, 5, 5, 5])
    code = main(["tradeoff", "--weights", str(wfile), "--alpha-star", "0.5"])
    assert code == 3
    assert "no feasible pairs" in capsys.readouterr().err


def test_tradeoff_bad_weights_exit_2(tmp_path, capsys):
    wfile = tmp_path / "w.txt"
    wfile.write_text("3\n-1\n")
    code = main(["tradeoff", "--weights", str(wfile), "--alpha-star", "0.5"])
    assert code == 2
    assert main(["tradeoff", "--weights", str(tmp_path / "absent"), "--alpha-star", "0.5"]) == 2
    capsys.readouterr()


def test_certify_command_accept_and_refuse(tmp_path, capsys):
    wfile = tmp_path / "w.txt"
    write_weights(wfile, [1] * 50)
    code = main(
        [
            "certify",
            "--weights", str(wfile),
            "--k", "400",
            "--alpha", "1/5",
            "--alpha-star", "0.4",
            "--delta", "0.05",
            "--u", "2",
            "--seed", "1",
        ]
    )
    out = capsys.readouterr().out
    assert code == 0
    header, row = out.splitlines()
    assert header == "certified,lhs,eps1,eps2,eps3,top_mean,sample_mean"
    assert row.startswith("true,")
    # tiny sample cannot certify anything
    wfile2 = tmp_path / "w2.txt"
    write_weights(wfile2, [100] * 10 + [1] * 40)
    code = main(
        [
            "certify",
            "--weights", str(wfile2),
            "--k", "60",
            "--alpha", "1/5",
            "--alpha-star", "0.4",
            "--delta", "0.05",
            "--u", "100",
        ]
    )
    assert code == 4
    assert capsys.readouterr().out.splitlines()[1].startswith("false,")


def test_certify_alpha_too_small_exit_2(tmp_path, capsys):
    wfile = tmp_path / "w.txt"
    write_weights(wfile, [1] * 50)
    code = main(
        [
            "certify",
            "--weights", str(wfile),
            "--k", "10",
            "--alpha", "0.1",
            "--alpha-star", "0.4",
            "--delta", "0.05",
            "--u", "100",
        ]
    )
    assert code == 2
    assert "alpha" in capsys.readouterr().err


def test_bound_command(tmp_path, capsys):
    cfgfile = tmp_path / "c.ini"
    cfgfile.write_text(
        "[task]\ndim = 6\nclasses = 3\ntrain_samples = 300\ntest_samples = 60\n"
        "clients = 6\n\n[attack]\nscenarios = negation_single\n"
    )
    code = main(["bound", "--config", str(cfgfile), "--u", "1000", "--seed", "2"])
    out = capsys.readouterr().out
    assert code == 0
    header, row = out.splitlines()
    assert header == "lhs,rhs"
    lhs, rhs = map(float, row.split(","))
    assert lhs <= rhs + 1e-9
    assert main(["bound", "--config", str(tmp_path / "nope.ini"), "--u", "5"]) == 2
    capsys.readouterr()


def test_simulate_command_and_unknown_key(tmp_path, capsys):
    cfgfile = tmp_path / "c.ini"
    cfgfile.write_text(SMALL)
    out = tmp_path / "res"
    code = main(["simulate", "--config", str(cfgfile), "--out-dir", str(out)])
    assert code == 0
    assert (out / "summary.csv").exists()
    assert len(list(out.glob("metrics_*.csv"))) == 18
    bad = tmp_path / "bad.ini"
    bad.write_text("[task]\nwidth = 5\n")
    assert main(["simulate", "--config", str(bad), "--out-dir", str(out)]) == 2
    capsys.readouterr()


def test_console_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "byzweight.cli", "--help"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert "tradeoff" in proc.stdout and "simulate" in proc.stdout
