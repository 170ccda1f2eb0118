"""
Strategy configuration and the pure reinitialization rules for a failed stage.
"""

import logging
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from config.settings import RECOVERY_SETTINGS
from model_utils.network import AdamState, glorot_uniform
from model_utils.params import ParameterVector, require_same_shape
from pipeline_utils.schedule import ScheduleMode
from sim_utils.errors import ConfigurationError

logger = logging.getLogger(__name__)


class StrategyKind(str, Enum):
    CHECKPOINTING = "checkpointing"
    REDUNDANT = "redundant"
    CHECKFREE = "checkfree"
    CHECKFREE_PLUS = "checkfree-plus"
    REINIT_RANDOM = "reinit-random"
    REINIT_COPY = "reinit-copy"
    REINIT_UNIFORM_AVG = "reinit-uniform-avg"
    NO_FAILURES = "no-failures"


# Strategies that rebuild a stage from scratch or from its neighbors
REINITIALIZING = {
    StrategyKind.CHECKFREE,
    StrategyKind.CHECKFREE_PLUS,
    StrategyKind.REINIT_RANDOM,
    StrategyKind.REINIT_COPY,
    StrategyKind.REINIT_UNIFORM_AVG,
}

# Strategies able to bring back the first and last stage
EDGE_CAPABLE = {
    StrategyKind.CHECKPOINTING,
    StrategyKind.REDUNDANT,
    StrategyKind.CHECKFREE_PLUS,
    StrategyKind.NO_FAILURES,
}


class StrategyConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: StrategyKind = StrategyKind.CHECKFREE
    checkpoint_interval: int = RECOVERY_SETTINGS["CHECKPOINT_INTERVAL"]
    lr_bump: float = RECOVERY_SETTINGS["LR_BUMP"]
    average_moments: bool = RECOVERY_SETTINGS["AVERAGE_MOMENTS"]
    replica_refresh_interval: int = RECOVERY_SETTINGS["REPLICA_REFRESH_INTERVAL"]

    @field_validator("checkpoint_interval", "replica_refresh_interval")
    @classmethod
    def _check_interval(cls, value):
        if value <= 0:
            raise ConfigurationError(f"intervals must be positive, got {value}")
        return value

    @field_validator("lr_bump")
    @classmethod
    def _check_bump(cls, value):
        if value <= 0:
            raise ConfigurationError(f"lr_bump must be positive, got {value}")
        return value

    @property
    def recovers_edge_stages(self) -> bool:
        return self.kind in EDGE_CAPABLE

    @property
    def schedule_mode(self) -> ScheduleMode:
        if self.kind == StrategyKind.CHECKFREE_PLUS:
            return ScheduleMode.SWAPPED_HALF
        return ScheduleMode.STANDARD

    @property
    def label(self) -> str:
        if self.kind == StrategyKind.CHECKPOINTING:
            return f"checkpointing@{self.checkpoint_interval}"
        return self.kind.value


def _normalized_weights(omega_prev: float, omega_next: float):
    if omega_prev < 0 or omega_next < 0:
        raise ConfigurationError(f"omegas must be nonnegative, got {omega_prev}, {omega_next}")
    total = omega_prev + omega_next
    if total == 0.0:
        return None
    return omega_prev / total, omega_next / total


def recover_checkfree(w_prev: ParameterVector, w_next: ParameterVector,
                      omega_prev: float, omega_next: float) -> ParameterVector:
    """Neighbor average weighted by each neighbor's last squared gradient norm."""
    require_same_shape(w_prev, w_next)
    weights = _normalized_weights(omega_prev, omega_next)
    if weights is None:
        logger.warning("Both neighbor omegas are zero; falling back to a uniform average")
        return reinit_uniform_avg(w_prev, w_next)
    a, b = weights
    return w_prev.with_values(a * w_prev.values + b * w_next.values)


def bump_lr(lr: float, lr_bump: float = RECOVERY_SETTINGS["LR_BUMP"]) -> float:
    if lr <= 0:
        raise ConfigurationError(f"learning rate must be positive, got {lr}")
    return lr_bump * lr


def reinit_random(shape, seed: int, gain: float = 1.0) -> ParameterVector:
    """Fresh weights drawn with the model's own initialization scheme."""
    shape = tuple(shape)
    if len(shape) != 2:
        raise ConfigurationError(f"random reinitialization expects a matrix shape, got {shape}")
    rng = np.random.default_rng(seed)
    return ParameterVector.from_array(glorot_uniform(rng, shape[0], shape[1], gain))


def reinit_copy(w_prev: ParameterVector) -> ParameterVector:
    return ParameterVector(w_prev.values, w_prev.shape)


def reinit_uniform_avg(w_prev: ParameterVector, w_next: ParameterVector) -> ParameterVector:
    require_same_shape(w_prev, w_next)
    return w_prev.with_values((w_prev.values + w_next.values) / 2.0)


def reduction_error(w_prev: ParameterVector, w_failed: ParameterVector, w_next: ParameterVector,
                    omega_prev: float, omega_next: float) -> float:
    """Squared distance between the weighted-average reinitialization and the lost weights."""
    require_same_shape(w_prev, w_failed, w_next)
    return recover_checkfree(w_prev, w_next, omega_prev, omega_next).squared_distance(w_failed)


def average_moments(prev: AdamState, nxt: AdamState, omega_prev: float, omega_next: float) -> AdamState:
    """Optimizer moments combined with the same weights as the stage weights."""
    if prev.size != nxt.size:
        raise ConfigurationError("cannot average optimizer states of different sizes")
    weights = _normalized_weights(omega_prev, omega_next) or (0.5, 0.5)
    a, b = weights
    return AdamState(a * prev.m + b * nxt.m, a * prev.v + b * nxt.v, max(prev.step, nxt.step))
