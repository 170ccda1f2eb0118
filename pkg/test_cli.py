#!/usr/bin/env python3
"""
Tests for the command-line surface and its exit codes.
"""

import os
import sys

import pytest

# Add the project root to Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from failure_utils.injector import FailureRateSpec, FailureTrace
from failure_utils.trace_io import load_trace, save_trace
from main import EXIT_CONFIG, EXIT_OK, EXIT_UNRECOVERABLE, cli_main

TINY_CONFIG = """\
# tiny desk model
NAME=tiny
INPUT_DIM=4
MODEL_DIM=8
HIDDEN_DIM=8
NUM_LAYERS=4
NUM_STAGES=4
BATCH_SIZE=16
NUM_MICROBATCHES=2
TOTAL_ITERATIONS=30
EVAL_INTERVAL=10
VALIDATION_SIZE=64
LEARNING_RATE=0.01
SEEDS=0
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "tiny.env"
    path.write_text(TINY_CONFIG)
    return str(path)


def cli(*argv):
    return cli_main(["--log-file", "", *argv])


def test_trace_gen_writes_a_loadable_trace(tmp_path, capsys):
    out = tmp_path / "t.trace"
    code = cli("trace-gen", "--p-iter", "0.1", "--iters", "100", "--seed", "5", "--num-stages", "4",
               "-o", str(out))
    assert code == EXIT_OK
    trace = load_trace(out)
    assert trace.rates.eligible_stages == (2, 3)
    assert trace.rates.seed == 5
    assert "failure events" in capsys.readouterr().out


def test_unknown_flag_is_a_usage_error(capsys):
    assert cli("run", "--no-such-flag") == EXIT_CONFIG
    assert "usage" in capsys.readouterr().err


def test_run_with_config_and_trace(tmp_path, config_file, capsys):
    trace_path = tmp_path / "t.trace"
    code = cli("trace-gen", "--p-iter", "0.05", "--iters", "30", "--stages", "2", "-o", str(trace_path))
    assert code == EXIT_OK
    code = cli("run", "-c", config_file, "--strategy", "checkfree", "--trace", str(trace_path),
               "--output-dir", str(tmp_path / "runs"))
    assert code == EXIT_OK
    assert "checkfree seed 0" in capsys.readouterr().out
    run_dirs = os.listdir(tmp_path / "runs")
    assert run_dirs == ["tiny-checkfree-seed0"]
    written = set(os.listdir(tmp_path / "runs" / run_dirs[0]))
    assert {"metrics.csv", "events.csv", "summary.json"} <= written


def test_checkfree_with_edge_trace_is_refused(tmp_path, config_file, capsys):
    trace_path = tmp_path / "edges.trace"
    assert cli("trace-gen", "--p-iter", "0.05", "--iters", "30", "--include-edges",
               "-o", str(trace_path)) == EXIT_OK
    code = cli("run", "-c", config_file, "--strategy", "checkfree", "--trace", str(trace_path),
               "--output-dir", str(tmp_path / "runs"))
    assert code == EXIT_CONFIG
    assert "error" in capsys.readouterr().err


def test_consecutive_failures_exit_unrecoverable(tmp_path, config_file):
    trace_path = tmp_path / "pair.trace"
    save_trace(FailureTrace(((12, 2), (12, 3)), FailureRateSpec(eligible_stages=(2, 3)), 92.12), trace_path)
    code = cli("run", "-c", config_file, "--strategy", "checkfree", "--trace", str(trace_path),
               "--output-dir", str(tmp_path / "runs"))
    assert code == EXIT_UNRECOVERABLE


def test_missing_config_file(tmp_path, capsys):
    assert cli("run", "-c", str(tmp_path / "nope.env")) == EXIT_CONFIG
    assert "not found" in capsys.readouterr().err


def test_compare_writes_table(tmp_path, config_file, capsys):
    code = cli("compare", "-c", config_file, "--strategies", "checkfree,checkfree-plus",
               "--target-loss", "1e9", "--output-dir", str(tmp_path / "cmp"))
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "checkfree-plus" in out
    assert os.path.exists(tmp_path / "cmp" / "comparison.csv")
