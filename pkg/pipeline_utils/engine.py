"""
One training iteration over a microbatch schedule: forward/backward per
microbatch in its execution order, gradients averaged, one Adam step per stage.
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, Tuple

import numpy as np

from model_utils.network import EdgeState, StageState, backward, evaluate_loss, forward
from model_utils.optim import adam_step, adam_step_edges
from model_utils.spec import ModelSpec
from pipeline_utils.schedule import MicrobatchSchedule
from sim_utils.errors import ConfigurationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelState:
    """Full training state; `iteration` doubles as the data cursor."""

    spec: ModelSpec
    edges: EdgeState
    stages: Tuple[StageState, ...]
    iteration: int = 0

    def __post_init__(self):
        stages = tuple(sorted(self.stages, key=lambda s: s.stage_id))
        if [s.stage_id for s in stages] != list(range(1, self.spec.num_stages + 1)):
            raise ConfigurationError("model state must hold exactly one state per stage")
        object.__setattr__(self, "stages", stages)

    def stage(self, stage_id: int) -> StageState:
        return self.stages[stage_id - 1]

    def with_stage(self, stage: StageState) -> "ModelState":
        stages = list(self.stages)
        stages[stage.stage_id - 1] = stage
        return replace(self, stages=tuple(stages))

    def validation_loss(self, inputs, targets) -> float:
        return evaluate_loss(self.spec, self.edges.layers, self.stages, inputs, targets)


@dataclass(frozen=True)
class IterationResult:
    train_loss: float
    omegas: Tuple[float, ...]
    iteration: int


def split_microbatches(inputs, targets, num_microbatches: int):
    inputs = np.asarray(inputs)
    targets = np.asarray(targets)
    if inputs.shape[0] % num_microbatches:
        raise ConfigurationError(
            f"batch of {inputs.shape[0]} is not divisible into {num_microbatches} microbatches"
        )
    return list(zip(np.split(inputs, num_microbatches), np.split(targets, num_microbatches)))


def run_iteration(state: ModelState, schedule: MicrobatchSchedule, batch,
                  lr_scale: float = 1.0) -> Tuple[IterationResult, ModelState]:
    """Accumulate gradients over the schedule's microbatches, then step every stage once."""
    inputs, targets = batch
    microbatches = split_microbatches(inputs, targets, schedule.num_microbatches)
    spec = state.spec

    stage_sums: Dict[int, np.ndarray] = {s.stage_id: np.zeros(s.num_params) for s in state.stages}
    edge_sum = np.zeros(state.edges.optimizer.size)
    losses = []
    for order, (mb_inputs, mb_targets) in zip(schedule.orders, microbatches):
        if order.num_stages != spec.num_stages:
            raise ConfigurationError("schedule order does not match the number of stages")
        ordered = [state.stage(stage_id) for stage_id in order]
        cache = forward(spec, state.edges.layers, ordered, mb_inputs, iteration=state.iteration)
        grads = backward(cache, mb_targets)
        losses.append(grads.loss)
        # Swapped and standard microbatches share one buffer per stage.
        for stage_id, g in grads.stages.items():
            stage_sums[stage_id] += g
        edge_sum += grads.edges

    count = schedule.num_microbatches
    new_stages = []
    for stage in state.stages:
        mean_grad = stage_sums[stage.stage_id] / count
        new_stages.append(adam_step(stage, mean_grad, stage.lr * lr_scale, iteration=state.iteration))
    new_edges = adam_step_edges(state.edges, edge_sum / count, state.edges.lr * lr_scale,
                                iteration=state.iteration)

    result = IterationResult(
        train_loss=float(np.mean(losses)),
        omegas=tuple(s.omega for s in new_stages),
        iteration=state.iteration,
    )
    new_state = replace(state, edges=new_edges, stages=tuple(new_stages), iteration=state.iteration + 1)
    return result, new_state
