#!/usr/bin/env python3
"""
Tests for failure-rate conversion, counter-based trace generation and trace files.
"""

import math
import os
import sys

import pytest

# Add the project root to Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from failure_utils.injector import (
    FailureRateSpec,
    FailureTrace,
    eligible_stages,
    generate_trace,
    hourly_to_per_iteration,
    iteration_draws,
    stage_failure_probability,
    stage_draw,
)
from failure_utils.trace_io import load_trace, parse_trace, save_trace, serialize_trace
from sim_utils.errors import ConfigurationError, TraceFormatError


def test_hourly_conversion():
    assert hourly_to_per_iteration(0.1, 3600.0) == pytest.approx(0.1)
    assert hourly_to_per_iteration(0.0, 92.12) == 0.0
    assert hourly_to_per_iteration(0.16, 92.12) == pytest.approx(1 - 0.84 ** (92.12 / 3600))
    with pytest.raises(ConfigurationError):
        hourly_to_per_iteration(1.0, 92.12)
    with pytest.raises(ConfigurationError):
        hourly_to_per_iteration(0.1, 0.0)


def test_device_level_probability():
    assert stage_failure_probability(0.1, 2) == pytest.approx(0.01)
    with pytest.raises(ConfigurationError):
        stage_failure_probability(0.1, 0)


def test_eligible_stages():
    assert eligible_stages(4, include_edges=False) == (2, 3)
    assert eligible_stages(4, include_edges=True) == (1, 2, 3, 4)


def test_same_spec_gives_identical_traces():
    rates = FailureRateSpec(p_hour=0.16, eligible_stages=(2, 3), seed=42)
    a = generate_trace(rates, 500, 92.12)
    b = generate_trace(rates, 500, 92.12)
    assert serialize_trace(a) == serialize_trace(b)
    assert a.fingerprint() == b.fingerprint()


def test_longer_trace_extends_shorter_one():
    rates = FailureRateSpec(p_iter=0.05, eligible_stages=(1, 2, 3, 4), seed=9)
    short = generate_trace(rates, 200)
    long = generate_trace(rates, 400)
    assert long.truncated(200).events == short.events


def test_events_only_hit_eligible_stages():
    rates = FailureRateSpec(p_iter=0.2, eligible_stages=(2, 3), seed=1)
    trace = generate_trace(rates, 300)
    assert len(trace) > 0
    assert {e.stage for e in trace.events} <= {2, 3}


def test_event_count_is_binomial():
    p, iterations = 0.05, 5000
    rates = FailureRateSpec(p_iter=p, eligible_stages=(2, 3), seed=123)
    trace = generate_trace(rates, iterations)
    n = 2 * iterations
    mean, sigma = n * p, math.sqrt(n * p * (1 - p))
    assert abs(len(trace) - mean) <= 3 * sigma


EIGHT_STAGES = tuple(range(1, 9))


def test_draws_do_not_repeat_across_iterations():
    for iteration in (0, 1, 7, 500):
        current = iteration_draws(11, iteration, 8)
        following = iteration_draws(11, iteration + 1, 8)
        assert len(set(current.tolist())) == 8
        assert not set(current.tolist()) & set(following.tolist())
    assert iteration_draws(11, 3, 8)[4] == stage_draw(11, 3, 5)


def test_deep_pipeline_stages_fail_independently():
    rates = FailureRateSpec(p_iter=0.3, eligible_stages=EIGHT_STAGES, seed=4)
    trace = generate_trace(rates, 400)
    hits = {(e.iteration, e.stage) for e in trace.events}
    for stage in range(1, 5):
        upper = {i for i in range(399) if (i, stage + 4) in hits}
        shifted = {i for i in range(399) if (i + 1, stage) in hits}
        assert upper != shifted


def test_event_count_is_binomial_per_stage():
    p, iterations = 0.05, 4000
    rates = FailureRateSpec(p_iter=p, eligible_stages=EIGHT_STAGES, seed=77)
    trace = generate_trace(rates, iterations)
    mean, sigma = iterations * p, math.sqrt(iterations * p * (1 - p))
    for stage in EIGHT_STAGES:
        count = sum(1 for e in trace.events if e.stage == stage)
        assert abs(count - mean) <= 3.5 * sigma, f"stage {stage}: {count} failures"
    assert abs(len(trace) - 8 * mean) <= 3 * math.sqrt(8) * sigma


def test_deep_trace_extends_shorter_one():
    rates = FailureRateSpec(p_iter=0.05, eligible_stages=EIGHT_STAGES, seed=9)
    assert generate_trace(rates, 300).truncated(150).events == generate_trace(rates, 150).events


def test_zero_rate_gives_empty_trace():
    rates = FailureRateSpec(p_hour=0.0, eligible_stages=(2, 3), seed=0)
    assert len(generate_trace(rates, 100)) == 0


def test_consecutive_failures_are_flagged():
    rates = FailureRateSpec(eligible_stages=(1, 2, 3, 4))
    trace = FailureTrace(((5, 2), (5, 3), (9, 1), (9, 4)), rates, 92.12)
    assert trace.consecutive_failures() == [(5, (2, 3))]
    assert trace.has_consecutive_failures
    assert trace.by_iteration() == {5: (2, 3), 9: (1, 4)}


def test_trace_rejects_events_outside_eligible_stages():
    rates = FailureRateSpec(eligible_stages=(2, 3))
    with pytest.raises(ConfigurationError):
        FailureTrace(((3, 1),), rates, 92.12)
    with pytest.raises(ConfigurationError):
        FailureTrace(((5, 2), (3, 2)), rates, 92.12)


def test_trace_file_round_trip(tmp_path):
    rates = FailureRateSpec(p_hour=0.1, eligible_stages=(2, 3), seed=7)
    trace = generate_trace(rates, 1000, 92.12)
    path = tmp_path / "t.trace"
    save_trace(trace, path)
    loaded = load_trace(path)
    assert loaded.events == trace.events
    assert loaded.rates == trace.rates
    assert loaded.iteration_seconds == trace.iteration_seconds


def test_trace_parse_errors_carry_line_numbers():
    header = "checkfree-trace v1 seed=1 p_hour=0.1 iter_s=92.12 stages=2,3\n"
    with pytest.raises(TraceFormatError) as e:
        parse_trace("not-a-trace v1\n")
    assert e.value.line == 1
    with pytest.raises(TraceFormatError) as e:
        parse_trace(header + "4,2\n7,1\n")
    assert e.value.line == 3
    with pytest.raises(TraceFormatError) as e:
        parse_trace(header + "4,2\n4,2\n")
    assert e.value.line == 3
    with pytest.raises(TraceFormatError):
        parse_trace(header + "4;2\n")
    with pytest.raises(TraceFormatError):
        parse_trace("checkfree-trace v2 seed=1 p_hour=0.1 iter_s=92.12 stages=2,3\n")


def test_missing_trace_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_trace(tmp_path / "missing.trace")
