#!/usr/bin/env python3
"""
Tests for checkpoint snapshots: the binary container and bit-exact rollback.
"""

import os
import sys

import numpy as np
import pytest

# Add the project root to Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from model_utils.network import init_network
from model_utils.spec import ModelSpec
from model_utils.tasks import SyntheticTask
from pipeline_utils.engine import ModelState, run_iteration
from pipeline_utils.schedule import build_schedule
from recovery_utils.checkpoint import (
    HEADER,
    CheckpointSnapshot,
    CheckpointStore,
    checkpoint_restore,
    checkpoint_save,
)
from sim_utils.errors import CheckpointFormatError, ConfigurationError

SPEC = ModelSpec(input_dim=3, model_dim=4, hidden_dim=5, num_layers=4, num_stages=2)


def fresh_state(seed=0):
    edges, stages = init_network(SPEC, np.random.default_rng(seed), lr=1e-2)
    return ModelState(SPEC, edges, stages, 0)


def same_state(a: ModelState, b: ModelState) -> bool:
    if a.iteration != b.iteration or not a.edges.layers.same_bits(b.edges.layers):
        return False
    if a.edges.optimizer.m.tobytes() != b.edges.optimizer.m.tobytes():
        return False
    for x, y in zip(a.stages, b.stages):
        if not x.flat_weights().same_bits(y.flat_weights()):
            return False
        if x.optimizer.v.tobytes() != y.optimizer.v.tobytes() or x.optimizer.step != y.optimizer.step:
            return False
        if x.omega != y.omega or x.lr != y.lr:
            return False
    return True


def train(state, task, schedule, until):
    while state.iteration < until:
        _, state = run_iteration(state, schedule, task.batch(state.iteration, 8))
    return state


def test_snapshot_bytes_restore_exactly():
    task = SyntheticTask.create(SPEC, 0)
    state = train(fresh_state(), task, build_schedule(2, "standard", 2), 3)
    data = checkpoint_save(state).to_bytes()
    assert data.startswith(HEADER)
    restored = checkpoint_restore(CheckpointSnapshot.from_bytes(data, SPEC), SPEC)
    assert same_state(restored, state)


def test_rollback_and_replay_matches_uninterrupted_run():
    task = SyntheticTask.create(SPEC, 0)
    schedule = build_schedule(2, "standard", 2)
    reference = train(fresh_state(), task, schedule, 240)

    store = CheckpointStore(SPEC, interval=50)
    state = fresh_state()
    store.maybe_save(state)
    while state.iteration < 130:
        _, state = run_iteration(state, schedule, task.batch(state.iteration, 8))
        store.maybe_save(state)
    assert store.latest_iteration == 100
    state = store.restore()
    assert state.iteration == 100
    state = train(state, task, schedule, 240)
    assert same_state(state, reference)


def test_store_saves_only_on_interval():
    store = CheckpointStore(SPEC, interval=3)
    assert store.restore() is None
    state = fresh_state()
    assert store.maybe_save(state)
    assert not store.maybe_save(state)
    task = SyntheticTask.create(SPEC, 0)
    _, state = run_iteration(state, build_schedule(1, "standard", 2), task.batch(0, 8))
    assert not store.maybe_save(state)
    assert store.saves == 1
    with pytest.raises(ConfigurationError):
        CheckpointStore(SPEC, interval=0)


def test_malformed_snapshots_are_rejected():
    data = checkpoint_save(fresh_state()).to_bytes()
    with pytest.raises(CheckpointFormatError):
        CheckpointSnapshot.from_bytes(b"garbage" + data, SPEC)
    with pytest.raises(CheckpointFormatError):
        CheckpointSnapshot.from_bytes(data[:-5], SPEC)
    with pytest.raises(CheckpointFormatError):
        CheckpointSnapshot.from_bytes(HEADER, SPEC)
    other = ModelSpec(input_dim=3, model_dim=6, hidden_dim=5, num_layers=4, num_stages=2)
    with pytest.raises(CheckpointFormatError):
        CheckpointSnapshot.from_bytes(data, other)
