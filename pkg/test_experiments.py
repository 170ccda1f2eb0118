#!/usr/bin/env python3
"""
End-to-end tests for convergence runs, strategy comparisons and model measurements.
These train a tiny network for a few dozen iterations.
"""

import os
import sys

import numpy as np
import pytest

# Add the project root to Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from config.experiment import build_config
from config.settings import EXPERIMENT_SETTINGS
from failure_utils.injector import FailureRateSpec, FailureTrace
from model_utils.network import AdamState, ResidualBlock, StageState, init_network
from model_utils.tasks import SyntheticTask, init_rng
from pipeline_utils.engine import ModelState, run_iteration
from pipeline_utils.schedule import ScheduleMode, build_schedule
from sim_utils.errors import ConfigurationError, UnsupportedRecoveryError
from workflows.ablations import ablation_swap, nondecreasing, stage_distance, swap_frame
from workflows.analysis import estimate_delta, probe_recovery_spike, spike_follows_error, spike_frame
from workflows.compare import baseline_target, compare_strategies, strategy_configs, target_from_baseline
from workflows.experiment import run_directory, run_experiment

ALL_STAGES = (1, 2, 3, 4)


@pytest.fixture
def tiny(tmp_path):
    def make(**overrides):
        values = dict(input_dim=4, model_dim=8, hidden_dim=8, num_layers=4, num_stages=4,
                      batch_size=16, num_microbatches=2, total_iterations=60, eval_interval=10,
                      validation_size=64, learning_rate=1e-2, lr_schedule="constant", seeds=(0,),
                      output_dir=str(tmp_path))
        values.update(overrides)
        return build_config(values)
    return make


def trace_of(events, stages=ALL_STAGES):
    return FailureTrace(tuple(events), FailureRateSpec(eligible_stages=stages), 92.12)


def same_weights(a: ModelState, b: ModelState) -> bool:
    return a.edges.layers.same_bits(b.edges.layers) and all(
        x.flat_weights().same_bits(y.flat_weights()) for x, y in zip(a.stages, b.stages)
    )


def test_redundant_computation_matches_failure_free_run(tiny):
    trace = trace_of([(10, 2), (25, 4), (40, 1)])
    redundant = run_experiment(tiny(strategy="redundant"), trace=trace, write=False)
    baseline = run_experiment(tiny(strategy="no-failures"), trace=trace, write=False)
    assert len(redundant.events) == 3
    assert all(e.reduction_error == 0.0 for e in redundant.events)
    assert same_weights(redundant.final_state, baseline.final_state)
    assert [p.val_loss for p in redundant.metrics] == [p.val_loss for p in baseline.metrics]


def test_empty_trace_behaves_like_no_failures(tiny):
    checkfree = run_experiment(tiny(strategy="checkfree"), trace=trace_of([], (2, 3)), write=False)
    baseline = run_experiment(tiny(strategy="no-failures"), write=False)
    assert checkfree.events == []
    assert same_weights(checkfree.final_state, baseline.final_state)


def test_runs_are_reproducible_byte_for_byte(tiny, tmp_path):
    config = tiny(strategy="checkfree", p_iter=0.05, failure_seed=3)
    first = run_experiment(config, output_dir=str(tmp_path / "a"))
    second = run_experiment(config, output_dir=str(tmp_path / "b"))
    assert first.summary["trace_fingerprint"] == second.summary["trace_fingerprint"]
    first_dir = run_directory(config, 0, str(tmp_path / "a"))
    second_dir = run_directory(config, 0, str(tmp_path / "b"))
    for filename in (EXPERIMENT_SETTINGS["METRICS_FILE"], EXPERIMENT_SETTINGS["EVENTS_FILE"]):
        with open(os.path.join(first_dir, filename), "rb") as a, open(os.path.join(second_dir, filename), "rb") as b:
            assert a.read() == b.read()


def test_checkpoint_rollback_replays_lost_iterations(tiny):
    config = tiny(strategy="checkpointing", checkpoint_interval=20)
    record = run_experiment(config, trace=trace_of([(30, 2)]), write=False)
    assert record.summary["wall_steps"] == 60
    assert record.summary["final_model_iteration"] == 50
    assert [e.action for e in record.events] == ["rollback"]

    shorter = run_experiment(tiny(strategy="no-failures", total_iterations=50), write=False)
    assert same_weights(record.final_state, shorter.final_state)


def test_checkfree_refuses_traces_with_edge_failures(tiny):
    with pytest.raises(UnsupportedRecoveryError):
        run_experiment(tiny(strategy="checkfree"), trace=trace_of([(5, 2)]), write=False)


def test_consecutive_failures_end_the_run(tiny):
    record = run_experiment(tiny(strategy="checkfree"), trace=trace_of([(15, 2), (15, 3)], (2, 3)),
                            write=False)
    assert record.unrecoverable
    assert record.summary["wall_steps"] == 15
    assert record.summary["unrecoverable_reason"]


def test_run_stops_at_target_loss(tiny):
    record = run_experiment(tiny(strategy="checkfree", target_loss=1e9), write=False)
    assert record.summary["wall_steps"] == 10
    assert record.summary["iterations_to_target"] == 10


def test_checkfree_recovery_is_logged_per_event(tiny):
    record = run_experiment(tiny(strategy="checkfree"), trace=trace_of([(20, 2), (35, 3)], (2, 3)),
                            write=False)
    assert [(e.iter, e.stage) for e in record.events] == [(20, 2), (35, 3)]
    assert all(e.reduction_error > 0 for e in record.events)
    assert record.summary["final_model_iteration"] == 60


def test_compare_single_strategy(tiny):
    comparison = compare_strategies([tiny(strategy="checkfree-plus")], target_loss=1e9)
    assert list(comparison.table["strategy"]) == ["checkfree-plus"]
    row = comparison.row("checkfree-plus")
    assert row["reached"] and row["iterations_to_target"] == 10
    with pytest.raises(KeyError):
        comparison.row("redundant")


def test_compare_refuses_different_traces(tiny):
    configs = [tiny(strategy="checkfree", p_iter=0.05, failure_seed=0),
               tiny(strategy="reinit-copy", p_iter=0.05, failure_seed=1)]
    with pytest.raises(ConfigurationError):
        compare_strategies(configs, target_loss=1.0)


def test_compare_marks_strategies_that_cannot_run(tiny):
    configs = strategy_configs(tiny(include_edge_stages=True), ["checkfree", "redundant"])
    comparison = compare_strategies(configs, trace=trace_of([(5, 1)]), target_loss=1e9)
    assert comparison.row("checkfree")["unrecoverable"]
    assert not comparison.row("redundant")["unrecoverable"]


def test_strategy_configs_pick_edge_eligibility(tiny):
    plus_only = strategy_configs(tiny(), ["checkfree-plus", "redundant"])
    assert all(c.include_edge_stages for c in plus_only)
    mixed = strategy_configs(tiny(), ["all"])
    assert len(mixed) == 7
    assert not any(c.include_edge_stages for c in mixed)
    with pytest.raises(ConfigurationError):
        strategy_configs(tiny(), ["bogus"])


def test_target_from_baseline():
    assert target_from_baseline(10.0, 2.0) == pytest.approx(3.6)
    assert target_from_baseline(10.0, 2.0, 0.5) == pytest.approx(6.0)


def _state(config, seed=0):
    spec = config.model_spec()
    edges, stages = init_network(spec, init_rng(seed), config.learning_rate)
    return ModelState(spec, edges, stages, 0), SyntheticTask.create(spec, seed)


def test_delta_is_zero_for_identity_mask(tiny):
    state, task = _state(tiny())
    report = estimate_delta(state, task.probe_set(32)[0], masks=[(1, 1, 1, 1)])
    assert report.delta_param == 0.0 and report.delta_function == 0.0
    with pytest.raises(ConfigurationError):
        estimate_delta(state, task.probe_set(32)[0], masks=[(1, 2, 1, 1)])


def test_delta_of_zero_blocks_is_zero(tiny):
    state, task = _state(tiny())
    spec = state.spec
    stages = tuple(StageState(s.stage_id, tuple(ResidualBlock.zeros(spec) for _ in s.blocks),
                              AdamState.fresh(s.num_params), 0.0, s.lr)
                   for s in state.stages)
    zeroed = ModelState(spec, state.edges, stages, 0)
    report = estimate_delta(zeroed, task.probe_set(32)[0])
    assert len(report.estimates) == 4
    assert report.delta_function == 0.0
    assert len(report.frame()) == 4


def test_spike_measurement_on_untrained_model(tiny):
    state, task = _state(tiny())
    measurements = probe_recovery_spike(state, 2, task.validation_set(64), task.probe_set(32)[0])
    assert [m.strategy for m in measurements] == ["reinit-random", "reinit-copy", "reinit-uniform-avg",
                                                  "checkfree"]
    by_name = {m.strategy: m for m in measurements}
    # No gradients yet, so the weighted average falls back to the plain one
    assert by_name["checkfree"].reduction_error == by_name["reinit-uniform-avg"].reduction_error
    assert by_name["checkfree"].loss_after == by_name["reinit-uniform-avg"].loss_after
    assert all(np.isfinite(m.spike) for m in measurements)
    assert list(spike_frame(measurements)["strategy"]) == [m.strategy for m in measurements]
    with pytest.raises(ConfigurationError):
        probe_recovery_spike(state, 1, task.validation_set(64), task.probe_set(32)[0])


def test_swap_ablation_pairs_runs_per_seed(tiny):
    pairs = ablation_swap(tiny(total_iterations=40))
    assert len(pairs) == 1
    pair = pairs[0]
    assert len(pair.milestones) == len(EXPERIMENT_SETTINGS["MILESTONE_FRACTIONS"])
    assert len(pair.gaps()) == len(pair.milestones)
    assert pair.distance_off > 0 and pair.distance_on > 0
    assert len(swap_frame(pairs)) == len(pair.milestones)


def test_nondecreasing_treats_missing_as_largest():
    assert nondecreasing([10, 20, None])
    assert not nondecreasing([None, 20])
    assert nondecreasing([5, 5, float("nan")])


def _mirrored(state: ModelState) -> ModelState:
    """Stages 2 and 4 start as exact copies of stages 1 and 3."""
    stages = list(state.stages)
    for source, target in ((1, 2), (3, 4)):
        original = state.stage(source)
        stages[target - 1] = StageState(target, original.blocks, AdamState.fresh(original.num_params),
                                        0.0, original.lr)
    return ModelState(state.spec, state.edges, tuple(stages), 0)


def test_swapped_training_keeps_neighbor_stages_closer(tiny):
    state, task = _state(tiny())
    state = _mirrored(state)
    standard = build_schedule(2, ScheduleMode.STANDARD, 4)
    swapped = build_schedule(2, ScheduleMode.SWAPPED_HALF, 4)
    off, on = state, state
    for cursor in range(20):
        inputs, targets = task.batch(cursor, 8)
        # Both microbatches carry the same samples
        batch = (np.concatenate([inputs, inputs]), np.concatenate([targets, targets]))
        _, off = run_iteration(off, standard, batch)
        _, on = run_iteration(on, swapped, batch)
    distance_off, distance_on = stage_distance(off), stage_distance(on)
    assert distance_on == 0.0
    assert distance_off > 0.0
    assert distance_on < distance_off
    assert stage_distance(on, 3, 4) == 0.0


def test_recovery_spike_grows_with_reduction_error(tiny):
    config = tiny(strategy="no-failures", total_iterations=200, eval_interval=50)
    trained = run_experiment(config, write=False).final_state
    task = SyntheticTask.create(trained.spec, 0)
    measurements = probe_recovery_spike(trained, 2, task.validation_set(64), task.probe_set(32)[0])
    by_name = {m.strategy: m for m in measurements}
    random_init, checkfree = by_name["reinit-random"], by_name["checkfree"]
    assert random_init.reduction_error > checkfree.reduction_error
    assert spike_follows_error([random_init, checkfree])
    assert spike_follows_error([random_init, by_name["reinit-uniform-avg"]])


def test_train_hours_from_measured_iterations_favor_checkfree_plus(tiny):
    base = tiny(eval_interval=1, include_edge_stages=True, checkpoint_interval=100)
    configs = strategy_configs(base, ["checkfree-plus", "redundant", "checkpointing"])
    trace = trace_of([(6, 2), (12, 3)])
    target = baseline_target(base, 0, fraction=0.6)
    comparison = compare_strategies(configs, trace=trace, target_loss=target)
    hours = {}
    for strategy in ("checkfree-plus", "redundant", "checkpointing"):
        row = comparison.row(strategy)
        assert row["reached"] and not row["unrecoverable"]
        hours[strategy] = row["train_hours"]
    assert hours["checkfree-plus"] < hours["redundant"]
    assert hours["checkfree-plus"] < hours["checkpointing"]
