"""
Experiment configuration: one KEY=value file per experiment, overridable from
the command line, validated into an ExperimentConfig.
"""

import json
import logging
import os
from typing import Any, Dict, Mapping, Optional, Tuple

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from config.settings import (
    EXPERIMENT_SETTINGS,
    FAILURE_SETTINGS,
    MODEL_SETTINGS,
    RECOVERY_SETTINGS,
    TRAINING_SETTINGS,
)
from failure_utils.injector import FailureRateSpec, eligible_stages
from model_utils.spec import Activation, ModelSpec, Task
from pipeline_utils.schedule import ScheduleMode
from recovery_utils.strategies import StrategyConfig, StrategyKind
from sim_utils.errors import ConfigurationError

logger = logging.getLogger(__name__)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = "run"

    # Model
    input_dim: int = MODEL_SETTINGS["INPUT_DIM"]
    model_dim: int = MODEL_SETTINGS["MODEL_DIM"]
    hidden_dim: int = MODEL_SETTINGS["HIDDEN_DIM"]
    num_layers: int = MODEL_SETTINGS["NUM_LAYERS"]
    num_stages: int = MODEL_SETTINGS["NUM_STAGES"]
    activation: Activation = Activation(MODEL_SETTINGS["ACTIVATION"])
    task: Task = Task(MODEL_SETTINGS["TASK"])
    num_classes: int = MODEL_SETTINGS["NUM_CLASSES"]
    target_init_gain: float = MODEL_SETTINGS["TARGET_INIT_GAIN"]

    # Recovery strategy
    strategy: StrategyKind = StrategyKind.CHECKFREE
    checkpoint_interval: int = RECOVERY_SETTINGS["CHECKPOINT_INTERVAL"]
    lr_bump: float = RECOVERY_SETTINGS["LR_BUMP"]
    average_moments: bool = RECOVERY_SETTINGS["AVERAGE_MOMENTS"]
    replica_refresh_interval: int = RECOVERY_SETTINGS["REPLICA_REFRESH_INTERVAL"]
    # None follows the strategy; True/False forces the swapped/standard schedule
    swap: Optional[bool] = None

    # Failures
    p_hour: float = 0.0
    p_iter: Optional[float] = None
    failure_seed: int = 0
    include_edge_stages: Optional[bool] = None
    trace_path: Optional[str] = None
    iteration_seconds: float = FAILURE_SETTINGS["ITERATION_SECONDS"]

    # Training
    total_iterations: int = TRAINING_SETTINGS["TOTAL_ITERATIONS"]
    batch_size: int = TRAINING_SETTINGS["BATCH_SIZE"]
    num_microbatches: int = TRAINING_SETTINGS["NUM_MICROBATCHES"]
    learning_rate: float = TRAINING_SETTINGS["LEARNING_RATE"]
    lr_schedule: str = TRAINING_SETTINGS["LR_SCHEDULE"]
    warmup_iterations: int = TRAINING_SETTINGS["WARMUP_ITERATIONS"]
    min_lr_ratio: float = TRAINING_SETTINGS["MIN_LR_RATIO"]
    eval_interval: int = TRAINING_SETTINGS["EVAL_INTERVAL"]
    validation_size: int = TRAINING_SETTINGS["VALIDATION_SIZE"]
    target_loss: Optional[float] = None

    # Cost model
    cost_preset: str = "desk"
    network_path: Optional[str] = None
    pipeline_schedule: str = "sequential"
    checkpoint_blocking: bool = False

    # Harness
    seeds: Tuple[int, ...] = tuple(EXPERIMENT_SETTINGS["SEEDS"])
    output_dir: str = EXPERIMENT_SETTINGS["OUTPUT_DIR"]
    workers: int = 1

    @field_validator("seeds", mode="before")
    @classmethod
    def _parse_seeds(cls, value):
        if isinstance(value, str):
            value = [v for v in value.replace(" ", "").split(",") if v]
        if isinstance(value, int):
            value = [value]
        return tuple(int(v) for v in value)

    @field_validator("lr_schedule")
    @classmethod
    def _check_schedule(cls, value):
        if value not in ("constant", "cosine"):
            raise ConfigurationError(f"lr_schedule must be 'constant' or 'cosine', got '{value}'")
        return value

    @field_validator("cost_preset")
    @classmethod
    def _check_preset(cls, value):
        if value not in ("desk", "medium"):
            raise ConfigurationError(f"cost_preset must be 'desk' or 'medium', got '{value}'")
        return value

    @model_validator(mode="after")
    def _check(self):
        positive = ("total_iterations", "batch_size", "num_microbatches", "eval_interval",
                    "validation_size", "workers", "checkpoint_interval", "replica_refresh_interval")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.batch_size % self.num_microbatches:
            raise ConfigurationError(
                f"batch_size {self.batch_size} is not divisible by {self.num_microbatches} microbatches"
            )
        if self.schedule_mode == ScheduleMode.SWAPPED_HALF and self.num_microbatches % 2:
            raise ConfigurationError("the swapped schedule needs an even microbatch count")
        if self.target_loss is not None and self.target_loss <= 0:
            raise ConfigurationError("target_loss must be positive when given")
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")
        self.model_spec()
        self.rate_spec()
        return self

    @property
    def schedule_mode(self) -> ScheduleMode:
        if self.swap is None:
            return self.strategy_config().schedule_mode
        return ScheduleMode.SWAPPED_HALF if self.swap else ScheduleMode.STANDARD

    def model_spec(self) -> ModelSpec:
        return ModelSpec(
            input_dim=self.input_dim,
            model_dim=self.model_dim,
            hidden_dim=self.hidden_dim,
            num_layers=self.num_layers,
            num_stages=self.num_stages,
            activation=self.activation,
            task=self.task,
            num_classes=self.num_classes,
        )

    def strategy_config(self) -> StrategyConfig:
        return StrategyConfig(
            kind=self.strategy,
            checkpoint_interval=self.checkpoint_interval,
            lr_bump=self.lr_bump,
            average_moments=self.average_moments,
            replica_refresh_interval=self.replica_refresh_interval,
        )

    def rate_spec(self) -> FailureRateSpec:
        include_edges = self.include_edge_stages
        if include_edges is None:
            include_edges = self.strategy_config().recovers_edge_stages
        rates = FailureRateSpec(
            p_hour=self.p_hour,
            eligible_stages=eligible_stages(self.num_stages, include_edges),
            seed=self.failure_seed,
            p_iter=self.p_iter,
        )
        rates.check_against(self.num_stages)
        return rates

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        values = self.model_dump()
        values.update(overrides)
        return build_config(values)


def build_config(values: Mapping[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig(**values)
    except ValidationError as e:
        raise ConfigurationError(f"invalid experiment config: {e}") from e


def load_experiment_config(path: Optional[str] = None,
                           overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    """Read KEY=value pairs (keys are case-insensitive field names), then apply overrides."""
    values: Dict[str, Any] = {}
    if path:
        if not os.path.exists(path):
            raise ConfigurationError(f"config file not found: {path}")
        for key, value in dotenv_values(path).items():
            if value is None or value == "":
                continue
            values[key.strip().lower()] = value
        logger.info(f"Loaded {len(values)} settings from {path}")
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return build_config(values)


def save_resolved_config(config: ExperimentConfig, path):
    directory = os.path.dirname(os.fspath(path))
    if directory:
        os.makedirs(directory, exist_ok=True)
    payload = {"format_version": EXPERIMENT_SETTINGS["FORMAT_VERSION"], **config.model_dump(mode="json")}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
