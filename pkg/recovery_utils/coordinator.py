"""
Applies a strategy's recovery to the model state at an iteration boundary and
keeps the strategy's side state (snapshots, replicas, redundant mirrors) fresh.
"""

import logging
from dataclasses import dataclass, replace
from typing import Iterable, List, Optional, Tuple

import numpy as np

from model_utils.network import AdamState, StageState
from model_utils.params import ParameterVector
from model_utils.spec import ModelSpec
from pipeline_utils.engine import ModelState
from recovery_utils.checkpoint import CheckpointStore
from recovery_utils.edges import EdgeReplica, EdgeSide, recover_edge_stage, refresh_edge_replicas
from recovery_utils.redundant import RedundantStore, redundant_recover
from recovery_utils.strategies import (
    StrategyConfig,
    StrategyKind,
    average_moments,
    bump_lr,
    recover_checkfree,
    reinit_copy,
    reinit_random,
    reinit_uniform_avg,
)
from sim_utils.errors import UnrecoverableFailureError, UnsupportedRecoveryError, UsageError

logger = logging.getLogger(__name__)

# Seed stream for random reinitialization, distinct from the task streams
REINIT_STREAM = 5


@dataclass(frozen=True)
class RecoveryAction:
    """One recovered stage; reduction_error is ||W_recovered - W_lost||^2."""

    stage: int
    action: str
    reduction_error: float
    lost_iterations: int = 0
    restored_iteration: Optional[int] = None


def stage_reinit_random(stage: StageState, seed: int, step: int) -> ParameterVector:
    """Fresh weights for every matrix of a stage, seeded by (run seed, step, stage)."""
    sequence = np.random.SeedSequence([seed, REINIT_STREAM, step, stage.stage_id])
    seeds = sequence.generate_state(len(stage.weight_shapes()), dtype=np.uint64)
    parts = [reinit_random(shape, int(s)) for shape, s in zip(stage.weight_shapes(), seeds)]
    return ParameterVector.concat(parts)


def check_recoverable(config: StrategyConfig, num_stages: int, failed_stages: Iterable[int],
                      iteration: Optional[int] = None):
    """Raise if this set of simultaneously failed stages is beyond the strategy."""
    dead = sorted(set(failed_stages))
    kind = config.kind
    if kind == StrategyKind.CHECKPOINTING:
        return
    edges = [s for s in dead if s in (1, num_stages)]
    if edges and not config.recovers_edge_stages:
        raise UnsupportedRecoveryError(
            f"{kind.value} cannot recover edge stage(s) {edges}; only checkfree-plus, "
            f"checkpointing and redundant computation can"
        )
    if kind == StrategyKind.REINIT_RANDOM:
        return
    for a, b in zip(dead, dead[1:]):
        if b == a + 1:
            raise UnrecoverableFailureError(
                f"consecutive stages {a} and {b} failed together", iteration=iteration, stages=(a, b)
            )
    if kind == StrategyKind.REDUNDANT and 1 in dead and num_stages in dead:
        raise UnrecoverableFailureError(
            f"stage 1 and its redundant holder {num_stages} failed together",
            iteration=iteration, stages=(1, num_stages),
        )


class RecoveryCoordinator:
    """Owns the per-run recovery state of one strategy."""

    def __init__(self, config: StrategyConfig, spec: ModelSpec, initial_state: ModelState, seed: int = 0):
        self.config = config
        self.spec = spec
        self.seed = seed
        self.initial_state = initial_state
        self.checkpoints: Optional[CheckpointStore] = None
        self.replicas: Optional[EdgeReplica] = None
        self.redundant: Optional[RedundantStore] = None
        self.replica_refreshes = 0

        if config.kind == StrategyKind.CHECKPOINTING:
            self.checkpoints = CheckpointStore(spec, config.checkpoint_interval)
        elif config.kind == StrategyKind.REDUNDANT:
            self.redundant = RedundantStore(spec.num_stages)

    def prepare(self, state: ModelState):
        """Populate the side state before the first training step."""
        self.after_step(state)

    def after_step(self, state: ModelState):
        if self.checkpoints is not None:
            self.checkpoints.maybe_save(state)
        if self.redundant is not None:
            self.redundant.refresh(state)
        if self.config.kind == StrategyKind.CHECKFREE_PLUS:
            if self.replicas is None or state.iteration % self.config.replica_refresh_interval == 0:
                self.replicas = refresh_edge_replicas(state.edges.layers, self.replicas)
                self.replica_refreshes += 1
            else:
                self.replicas = self.replicas.aged()

    def recover(self, state: ModelState, failed_stages: Iterable[int],
                step: Optional[int] = None) -> Tuple[ModelState, List[RecoveryAction]]:
        """Recover every stage that failed at this boundary; neighbors are read pre-recovery."""
        dead = tuple(sorted(set(failed_stages)))
        if not dead:
            return state, []
        kind = self.config.kind
        if kind == StrategyKind.NO_FAILURES:
            raise UsageError("no-failures runs never receive failure events")
        for stage_id in dead:
            if not 1 <= stage_id <= self.spec.num_stages:
                raise UnsupportedRecoveryError(f"stage {stage_id} does not exist")
        check_recoverable(self.config, self.spec.num_stages, dead, iteration=step)

        if kind == StrategyKind.CHECKPOINTING:
            return self._rollback(state, dead)
        if kind == StrategyKind.REDUNDANT:
            return self._redundant(state, dead, step)
        return self._reinitialize(state, dead, step)

    def _rollback(self, state: ModelState, dead: Tuple[int, ...]):
        restored = self.checkpoints.restore()
        action = "rollback"
        if restored is None:
            logger.warning("No checkpoint available; restarting from initialization")
            restored, action = self.initial_state, "restart"
        lost = state.iteration - restored.iteration
        logger.info(f"Stage(s) {list(dead)} failed: rolled back from iteration {state.iteration} "
                    f"to {restored.iteration}, {lost} iterations lost")
        actions = []
        for index, stage_id in enumerate(dead):
            error = restored.stage(stage_id).flat_weights().squared_distance(
                state.stage(stage_id).flat_weights())
            actions.append(RecoveryAction(stage_id, action, error,
                                          lost_iterations=lost if index == 0 else 0,
                                          restored_iteration=restored.iteration))
        return restored, actions

    def _redundant(self, state: ModelState, dead: Tuple[int, ...], step: Optional[int]):
        actions = []
        for stage_id in dead:
            recovered = redundant_recover(stage_id, self.redundant, dead, iteration=step)
            error = recovered.flat_weights().squared_distance(state.stage(stage_id).flat_weights())
            state = state.with_stage(recovered)
            actions.append(RecoveryAction(stage_id, "redundant_copy", error))
        return state, actions

    def _reinitialize(self, state: ModelState, dead: Tuple[int, ...], step: Optional[int]):
        before = state
        actions = []
        for stage_id in dead:
            lost = before.stage(stage_id)
            if stage_id in (1, self.spec.num_stages) and self.config.kind == StrategyKind.CHECKFREE_PLUS:
                recovered, action, state = self._recover_edge(before, state, stage_id)
            else:
                recovered, action = self._reinit_intermediate(before, lost, step)
            state = state.with_stage(recovered)
            error = recovered.flat_weights().squared_distance(lost.flat_weights())
            actions.append(RecoveryAction(stage_id, action, error))
            logger.info(f"Recovered stage {stage_id} by {action} "
                        f"(reduction error {error:.6g}, lr {recovered.lr:.3g})")
        return state, actions

    def _recover_edge(self, before: ModelState, state: ModelState, stage_id: int):
        side = EdgeSide.FIRST if stage_id == 1 else EdgeSide.LAST
        neighbor_id = 2 if side == EdgeSide.FIRST else self.spec.num_stages - 1
        recovered, edges = recover_edge_stage(side, before.stage(stage_id), before.stage(neighbor_id),
                                              self.replicas, state.edges, self.config)
        return recovered, "edge_copy", replace(state, edges=edges)

    def _reinit_intermediate(self, before: ModelState, lost: StageState, step: Optional[int]):
        kind = self.config.kind
        prev = before.stage(lost.stage_id - 1)
        nxt = before.stage(lost.stage_id + 1)
        optimizer = AdamState.fresh(lost.num_params)

        if kind == StrategyKind.REINIT_RANDOM:
            weights = stage_reinit_random(lost, self.seed, step or 0)
            action = "random_reinit"
        elif kind == StrategyKind.REINIT_COPY:
            weights = reinit_copy(prev.flat_weights())
            action = "copy_previous"
        elif kind == StrategyKind.REINIT_UNIFORM_AVG:
            weights = reinit_uniform_avg(prev.flat_weights(), nxt.flat_weights())
            action = "uniform_average"
        else:
            weights = recover_checkfree(prev.flat_weights(), nxt.flat_weights(), prev.omega, nxt.omega)
            action = "checkfree_average"
            if self.config.average_moments:
                optimizer = average_moments(prev.optimizer, nxt.optimizer, prev.omega, nxt.omega)

        recovered = replace(lost.with_weights(weights), optimizer=optimizer, omega=0.0,
                            lr=bump_lr(lost.lr, self.config.lr_bump))
        return recovered, action
