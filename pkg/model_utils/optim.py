"""
Adam without weight decay, gradient-norm bookkeeping and the lr scheduler.
"""

import math
from dataclasses import replace
from typing import Tuple

import numpy as np

from config.settings import TRAINING_SETTINGS
from model_utils.network import AdamState, EdgeState, StageState
from model_utils.params import ParameterVector
from sim_utils.errors import ConfigurationError
from sim_utils.guards import ensure_finite

BETA1, BETA2 = TRAINING_SETTINGS["ADAM_BETAS"]
EPSILON = TRAINING_SETTINGS["ADAM_EPS"]


def grad_norm_sq(grads) -> float:
    """Sum of squares over all given gradient arrays (one array or a list of them)."""
    if isinstance(grads, ParameterVector):
        parts = [grads.values]
    elif isinstance(grads, np.ndarray):
        parts = [grads]
    else:
        parts = [np.asarray(g.values if isinstance(g, ParameterVector) else g, dtype=np.float64)
                 for g in grads]
    total = 0.0
    for part in parts:
        flat = np.ravel(part)
        total += float(np.dot(flat, flat))
    return total


def adam_update(weights: np.ndarray, grads: np.ndarray, state: AdamState, lr: float,
                iteration=None) -> Tuple[np.ndarray, AdamState]:
    """One Adam step on flat arrays; returns new weights and moments."""
    if lr <= 0:
        raise ConfigurationError(f"learning rate must be positive, got {lr}")
    grads = np.asarray(grads, dtype=np.float64).ravel()
    ensure_finite(grads, "gradients passed to Adam", iteration)
    if grads.shape != weights.shape or grads.size != state.size:
        raise ConfigurationError(
            f"gradient size {grads.size} does not match {weights.size} parameters"
        )
    step = state.step + 1
    m = BETA1 * state.m + (1.0 - BETA1) * grads
    v = BETA2 * state.v + (1.0 - BETA2) * (grads * grads)
    m_hat = m / (1.0 - BETA1 ** step)
    v_hat = v / (1.0 - BETA2 ** step)
    new_weights = weights - lr * m_hat / (np.sqrt(v_hat) + EPSILON)
    ensure_finite(new_weights, "weights after Adam step", iteration)
    return new_weights, AdamState(m, v, step)


def adam_step(stage: StageState, grads, lr: float = None, iteration=None) -> StageState:
    """Apply Adam to one stage and record omega = ||grads||^2."""
    lr = stage.lr if lr is None else lr
    if isinstance(grads, ParameterVector):
        grads = grads.values
    weights = stage.flat_weights()
    new_values, optimizer = adam_update(weights.values, grads, stage.optimizer, lr, iteration)
    updated = stage.with_weights(weights.with_values(new_values))
    return replace(updated, optimizer=optimizer, omega=grad_norm_sq(grads))


def adam_step_edges(edges: EdgeState, grads, lr: float = None, iteration=None) -> EdgeState:
    lr = edges.lr if lr is None else lr
    flat = edges.layers.flat()
    new_values, optimizer = adam_update(flat.values, grads, edges.optimizer, lr, iteration)
    return replace(edges, layers=edges.layers.with_flat(flat.with_values(new_values)),
                   optimizer=optimizer)


def schedule_factor(iteration: int, schedule: str = "constant", warmup: int = 0,
                    total: int = 1, min_ratio: float = 0.1) -> float:
    """Multiplier applied to every base lr at a given model iteration."""
    if warmup > 0 and iteration < warmup:
        return (iteration + 1) / warmup
    if schedule == "constant":
        return 1.0
    if schedule == "cosine":
        span = max(total - warmup, 1)
        progress = min(max(iteration - warmup, 0) / span, 1.0)
        return min_ratio + (1.0 - min_ratio) * 0.5 * (1.0 + math.cos(math.pi * progress))
    raise ConfigurationError(f"unknown lr schedule '{schedule}'")
