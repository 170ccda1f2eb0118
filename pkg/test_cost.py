#!/usr/bin/env python3
"""
Tests for the network profile and the analytic time accounting.
"""

import os
import sys

import numpy as np
import pytest

# Add the project root to Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from cost_utils.accounting import (
    SECONDS_PER_HOUR,
    CostParams,
    iteration_cost,
    iteration_time,
    recovery_time,
    steady_state_overhead_bytes,
    train_time,
)
from cost_utils.network import (
    default_profile,
    load_profile,
    mbps_to_bytes_per_second,
    parse_profile,
    save_profile,
    uniform_profile,
)
from failure_utils.injector import FailureRateSpec, FailureTrace
from recovery_utils.strategies import StrategyConfig, StrategyKind
from sim_utils.errors import ConfigurationError, NetworkProfileFormatError, UnsupportedRecoveryError

# Four stages on identical 40 MB/s links, no latency
PROFILE = uniform_profile(4, 0.0, 40e6)
MEDIUM = CostParams.medium_model()


def trace_of(events, stages=(1, 2, 3, 4)):
    return FailureTrace(tuple(events), FailureRateSpec(eligible_stages=stages), 92.12)


def test_calibrated_iteration_times():
    checkfree = iteration_time(StrategyKind.CHECKFREE, PROFILE, MEDIUM)
    redundant = iteration_time(StrategyKind.REDUNDANT, PROFILE, MEDIUM)
    assert checkfree == pytest.approx(81.6)
    assert redundant == pytest.approx(132.2)
    assert redundant / checkfree == pytest.approx(1.654, rel=0.15)


def test_per_strategy_overheads():
    assert iteration_time("checkfree-plus", PROFILE, MEDIUM) == pytest.approx(81.6 + 2.5)
    lazy = StrategyConfig(kind=StrategyKind.CHECKFREE_PLUS, replica_refresh_interval=5)
    assert iteration_time(lazy, PROFILE, MEDIUM) == pytest.approx(81.6 + 0.5)
    assert steady_state_overhead_bytes(lazy, PROFILE, MEDIUM) == pytest.approx(2 * 100e6 / 5)

    upload = 4200e6 / (500e6 / 8)
    ckpt = iteration_cost(StrategyKind.CHECKPOINTING, PROFILE, MEDIUM)
    assert ckpt.breakdown.checkpoint_overhead == pytest.approx(upload / 100)
    blocking = CostParams.medium_model(checkpoint_blocking=True)
    assert iteration_cost(StrategyKind.CHECKPOINTING, PROFILE, blocking).breakdown.checkpoint_overhead == \
        pytest.approx((upload + 0.1) / 100)

    assert steady_state_overhead_bytes(StrategyKind.REDUNDANT, PROFILE, MEDIUM) == pytest.approx(4 * 1e9)
    assert steady_state_overhead_bytes(StrategyKind.CHECKFREE, PROFILE, MEDIUM) == 0.0


def test_fill_drain_schedule():
    params = CostParams.medium_model(schedule="fill_drain")
    assert iteration_time(StrategyKind.CHECKFREE, PROFILE, params) == pytest.approx(11 * 2.4 + 11 * 0.2)


def test_redundant_always_slower_than_checkfree():
    rng = np.random.default_rng(0)
    profile = uniform_profile(4, 0.05, 50e6)
    for _ in range(20):
        f = float(rng.uniform(0.01, 2.0))
        params = CostParams(fwd_seconds=f, bwd_seconds=f * float(rng.uniform(1.0, 3.0)),
                            activation_bytes=int(rng.integers(1, 10_000_000)))
        assert iteration_time(StrategyKind.REDUNDANT, profile, params) > \
            iteration_time(StrategyKind.CHECKFREE, profile, params)


def test_recovery_times():
    stage_transfer = 1e9 / 40e6
    assert recovery_time(StrategyKind.CHECKFREE, PROFILE, MEDIUM, 2) == pytest.approx(2 * (1e9 + 8) / 40e6)
    assert recovery_time(StrategyKind.REINIT_COPY, PROFILE, MEDIUM, 2) == pytest.approx(stage_transfer)
    assert recovery_time(StrategyKind.REINIT_RANDOM, PROFILE, MEDIUM, 2) == 0.0
    assert recovery_time(StrategyKind.REDUNDANT, PROFILE, MEDIUM, 1) == pytest.approx(stage_transfer)
    assert recovery_time(StrategyKind.CHECKFREE_PLUS, PROFILE, MEDIUM, 1) == pytest.approx(1.1e9 / 40e6)
    assert recovery_time(StrategyKind.CHECKPOINTING, PROFILE, MEDIUM, 3) == pytest.approx(0.1 + 4200e6 / 62.5e6)
    assert recovery_time(StrategyKind.NO_FAILURES, PROFILE, MEDIUM, 2) == 0.0
    slow_start = CostParams.medium_model(node_startup_seconds=30.0)
    assert recovery_time(StrategyKind.REINIT_COPY, PROFILE, slow_start, 2) == pytest.approx(30.0 + stage_transfer)
    with pytest.raises(UnsupportedRecoveryError):
        recovery_time(StrategyKind.CHECKFREE, PROFILE, MEDIUM, 1)
    with pytest.raises(ConfigurationError):
        recovery_time(StrategyKind.CHECKFREE, PROFILE, MEDIUM, 5)


def test_train_time_without_failures():
    result = train_time(200, None, trace_of(()), StrategyKind.CHECKFREE, PROFILE, MEDIUM)
    assert result.hours == pytest.approx(200 * 81.6 / SECONDS_PER_HOUR)
    assert result.wall_iterations == 200 and result.recoveries == 0


def test_train_time_charges_checkpoint_rollbacks():
    config = StrategyConfig(kind=StrategyKind.CHECKPOINTING, checkpoint_interval=100)
    per_iteration = iteration_time(config, PROFILE, MEDIUM)
    result = train_time(200, None, trace_of([(130, 2)]), config, PROFILE, MEDIUM)
    recovery = 0.1 + 4200e6 / 62.5e6
    assert result.wall_iterations == 230
    assert result.breakdown.rollback_lost == pytest.approx(30 * per_iteration)
    assert result.hours == pytest.approx((230 * per_iteration + recovery) / SECONDS_PER_HOUR)


def test_train_time_uses_measured_iteration_seconds():
    result = train_time(100, 10.0, trace_of([(5, 2)]), StrategyKind.CHECKFREE, PROFILE, MEDIUM)
    assert result.hours == pytest.approx((1000.0 + 2 * (1e9 + 8) / 40e6) / SECONDS_PER_HOUR)


def test_train_time_ordering_matches_strategy_costs():
    trace = trace_of([(150, 2), (420, 3), (777, 1)])
    plus = train_time(1050, None, trace, StrategyKind.CHECKFREE_PLUS, PROFILE, MEDIUM).hours
    redundant = train_time(1000, None, trace, StrategyKind.REDUNDANT, PROFILE, MEDIUM).hours
    checkpointing = train_time(1000, None, trace, StrategyKind.CHECKPOINTING, PROFILE, MEDIUM).hours
    assert plus < redundant
    assert plus < checkpointing


def test_cost_params_validation():
    with pytest.raises(ConfigurationError):
        CostParams(fwd_seconds=2.0, bwd_seconds=1.0)
    with pytest.raises(ConfigurationError):
        CostParams(schedule="interleaved")
    with pytest.raises(ConfigurationError):
        CostParams(activation_bytes=0)


def test_default_profile_places_stages_round_robin():
    profile = default_profile(7)
    assert profile.num_stages == 7
    assert profile.assignment[5] == profile.sites[0]
    latency, bandwidth = profile.link(1, 2)
    assert latency == pytest.approx(0.065)
    assert bandwidth == pytest.approx(mbps_to_bytes_per_second(500))
    with pytest.raises(ConfigurationError):
        profile.check_stages(4)


def test_profile_file_round_trip(tmp_path):
    path = tmp_path / "net.txt"
    save_profile(PROFILE, path)
    assert load_profile(path) == PROFILE


def test_profile_parse_errors():
    good = "ckfree-net v1\nsites a,b\nassignment a,b\n0 0.1\n0.1 0\ninf 10\n10 inf\n"
    profile = parse_profile(good)
    assert profile.transfer_seconds(1, 2, 20.0) == pytest.approx(2.1)
    with pytest.raises(NetworkProfileFormatError) as e:
        parse_profile(good.replace("0.1 0\n", "0.1 x\n"))
    assert e.value.line == 5
    with pytest.raises(NetworkProfileFormatError):
        parse_profile(good.replace("ckfree-net v1", "ckfree-net v9"))
    with pytest.raises(NetworkProfileFormatError):
        parse_profile(good.replace("assignment a,b", "assignment a,c"))
    with pytest.raises(NetworkProfileFormatError):
        parse_profile("ckfree-net v1\nsites a,b\nassignment a,b\n0 0\n")
