"""
Analytic time accounting for a pipeline under each recovery strategy:
per-iteration cost, per-failure recovery cost and wall-clock train time.
"""

import logging
from dataclasses import dataclass, fields
from typing import Dict, Optional, Union

from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from config.settings import COST_SETTINGS, MEDIUM_MODEL_COST
from cost_utils.network import NetworkProfile
from failure_utils.injector import FailureTrace
from recovery_utils.coordinator import check_recoverable
from recovery_utils.strategies import StrategyConfig, StrategyKind
from sim_utils.errors import ConfigurationError, UnsupportedRecoveryError

logger = logging.getLogger(__name__)

SECONDS_PER_HOUR = 3600.0
# Each neighbor also sends its omega
SCALAR_BYTES = 8

Strategy = Union[StrategyConfig, StrategyKind, str]


class CostParams(BaseModel):
    """Per-stage, per-microbatch compute times and message sizes."""

    model_config = ConfigDict(frozen=True)

    fwd_seconds: float = COST_SETTINGS["FWD_SECONDS"]
    bwd_seconds: float = COST_SETTINGS["BWD_SECONDS"]
    activation_bytes: int = COST_SETTINGS["ACTIVATION_BYTES"]
    stage_weight_bytes: int = COST_SETTINGS["STAGE_WEIGHT_BYTES"]
    edge_weight_bytes: int = COST_SETTINGS["EDGE_WEIGHT_BYTES"]
    full_model_bytes: int = COST_SETTINGS["FULL_MODEL_BYTES"]
    num_microbatches: int = COST_SETTINGS["NUM_MICROBATCHES"]
    storage_latency: float = COST_SETTINGS["STORAGE_LATENCY"]
    storage_bandwidth: float = COST_SETTINGS["STORAGE_BANDWIDTH"]
    schedule: str = COST_SETTINGS["SCHEDULE"]
    checkpoint_blocking: bool = COST_SETTINGS["CHECKPOINT_BLOCKING"]
    node_startup_seconds: float = COST_SETTINGS["NODE_STARTUP_SECONDS"]

    @field_validator("fwd_seconds", "bwd_seconds", "storage_bandwidth")
    @classmethod
    def _check_positive(cls, value):
        if value <= 0:
            raise ConfigurationError(f"compute times and storage bandwidth must be positive, got {value}")
        return value

    @field_validator("activation_bytes", "stage_weight_bytes", "edge_weight_bytes",
                     "full_model_bytes", "num_microbatches")
    @classmethod
    def _check_sizes(cls, value):
        if value <= 0:
            raise ConfigurationError(f"sizes and microbatch counts must be positive, got {value}")
        return value

    @field_validator("storage_latency", "node_startup_seconds")
    @classmethod
    def _check_nonnegative(cls, value):
        if value < 0:
            raise ConfigurationError(f"latencies must be nonnegative, got {value}")
        return value

    @field_validator("schedule")
    @classmethod
    def _check_schedule(cls, value):
        if value not in ("sequential", "fill_drain"):
            raise ConfigurationError(f"unknown pipeline schedule '{value}'")
        return value

    @model_validator(mode="after")
    def _check_relations(self):
        if self.bwd_seconds < self.fwd_seconds:
            raise ConfigurationError("backward must cost at least as much as forward")
        if self.edge_weight_bytes >= self.stage_weight_bytes:
            logger.warning(f"Edge layers ({self.edge_weight_bytes} B) are not much smaller than a "
                           f"stage ({self.stage_weight_bytes} B); replica traffic will be large")
        return self

    @classmethod
    def medium_model(cls, **overrides) -> "CostParams":
        values = {key.lower(): value for key, value in MEDIUM_MODEL_COST.items()}
        values.update(overrides)
        return cls(**values)


@dataclass(frozen=True)
class TimeBreakdown:
    compute: float = 0.0
    communication: float = 0.0
    checkpoint_overhead: float = 0.0
    recovery: float = 0.0
    rollback_lost: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigurationError(f"{f.name} time cannot be negative")

    @property
    def total(self) -> float:
        return (self.compute + self.communication + self.checkpoint_overhead
                + self.recovery + self.rollback_lost)

    def scaled(self, factor: float) -> "TimeBreakdown":
        return TimeBreakdown(**{f.name: getattr(self, f.name) * factor for f in fields(self)})

    def as_dict(self) -> Dict[str, float]:
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values["total"] = self.total
        return values


@dataclass(frozen=True)
class IterationCost:
    breakdown: TimeBreakdown
    # Bytes per iteration beyond activation traffic (replicas, snapshots, mirrors)
    extra_bytes: float

    @property
    def seconds(self) -> float:
        return self.breakdown.total


@dataclass(frozen=True)
class TrainTime:
    hours: float
    breakdown: TimeBreakdown
    wall_iterations: int
    recoveries: int


def as_strategy(strategy: Strategy) -> StrategyConfig:
    if isinstance(strategy, StrategyConfig):
        return strategy
    return StrategyConfig(kind=StrategyKind(strategy))


def _pipeline_seconds(profile: NetworkProfile, params: CostParams, microbatches: int,
                      compute_per_microbatch: float, activation_bytes: float):
    """(compute, communication) for one pass of `microbatches` through all stages."""
    s = profile.num_stages
    # Activations forward and their gradients backward over each boundary
    boundary = [2.0 * profile.transfer_seconds(i, i + 1, activation_bytes) for i in range(1, s)]
    if params.schedule == "fill_drain":
        slots = microbatches + s - 1
        return slots * compute_per_microbatch, slots * max(boundary, default=0.0)
    return microbatches * s * compute_per_microbatch, microbatches * sum(boundary)


def iteration_cost(strategy: Strategy, profile: NetworkProfile, params: CostParams) -> IterationCost:
    config = as_strategy(strategy)
    kind = config.kind
    s = profile.num_stages
    m = params.num_microbatches
    f, b = params.fwd_seconds, params.bwd_seconds
    extra_comm, extra_bytes, checkpoint = 0.0, 0.0, 0.0

    if kind == StrategyKind.REDUNDANT:
        # Half-size microbatches at double count, each stage also running the next stage forward
        compute, comm = _pipeline_seconds(profile, params, 2 * m, (2 * f + b) / 2.0,
                                          params.activation_bytes / 2.0)
        refresh = [profile.transfer_seconds(stage, holder, params.stage_weight_bytes)
                   for stage, holder in _mirror_links(s)]
        extra_comm = max(refresh, default=0.0)
        extra_bytes = float(s * params.stage_weight_bytes) if s > 1 else 0.0
    else:
        compute, comm = _pipeline_seconds(profile, params, m, f + b, params.activation_bytes)

    if kind == StrategyKind.CHECKFREE_PLUS and s > 1:
        transfers = [profile.transfer_seconds(1, 2, params.edge_weight_bytes),
                     profile.transfer_seconds(s, s - 1, params.edge_weight_bytes)]
        extra_comm = max(transfers) / config.replica_refresh_interval
        extra_bytes = 2.0 * params.edge_weight_bytes / config.replica_refresh_interval
    elif kind == StrategyKind.CHECKPOINTING:
        upload = params.full_model_bytes / params.storage_bandwidth
        if params.checkpoint_blocking:
            upload += params.storage_latency
        checkpoint = upload / config.checkpoint_interval
        extra_bytes = params.full_model_bytes / config.checkpoint_interval

    breakdown = TimeBreakdown(compute=compute, communication=comm + extra_comm,
                              checkpoint_overhead=checkpoint)
    return IterationCost(breakdown, extra_bytes)


def _mirror_links(num_stages: int):
    """(stage, node holding its mirror) pairs; stage 1 is mirrored by stage s."""
    return [(stage, num_stages if stage == 1 else stage - 1) for stage in range(1, num_stages + 1)
            if num_stages > 1]


def iteration_time(strategy: Strategy, profile: NetworkProfile, params: CostParams) -> float:
    return iteration_cost(strategy, profile, params).seconds


def steady_state_overhead_bytes(strategy: Strategy, profile: NetworkProfile, params: CostParams) -> float:
    return iteration_cost(strategy, profile, params).extra_bytes


def recovery_time(strategy: Strategy, profile: NetworkProfile, params: CostParams, failed_stage: int) -> float:
    """Seconds until a replacement node for `failed_stage` holds usable weights."""
    config = as_strategy(strategy)
    kind = config.kind
    s = profile.num_stages
    if not 1 <= failed_stage <= s:
        raise ConfigurationError(f"stage {failed_stage} outside 1..{s}")
    if kind == StrategyKind.NO_FAILURES:
        return 0.0
    check_recoverable(config, s, [failed_stage])
    stage_bytes = params.stage_weight_bytes
    is_edge = failed_stage in (1, s)

    if kind == StrategyKind.CHECKPOINTING:
        seconds = params.storage_latency + params.full_model_bytes / params.storage_bandwidth
    elif kind == StrategyKind.REDUNDANT:
        holder = s if failed_stage == 1 else failed_stage - 1
        seconds = profile.transfer_seconds(holder, failed_stage, stage_bytes)
    elif kind == StrategyKind.CHECKFREE_PLUS and is_edge:
        neighbor = 2 if failed_stage == 1 else s - 1
        seconds = profile.transfer_seconds(neighbor, failed_stage, stage_bytes + params.edge_weight_bytes)
    elif kind == StrategyKind.REINIT_RANDOM:
        seconds = profile.link(failed_stage - 1, failed_stage)[0]
    elif kind == StrategyKind.REINIT_COPY:
        seconds = profile.transfer_seconds(failed_stage - 1, failed_stage, stage_bytes)
    elif kind in (StrategyKind.CHECKFREE, StrategyKind.CHECKFREE_PLUS, StrategyKind.REINIT_UNIFORM_AVG):
        seconds = (profile.transfer_seconds(failed_stage - 1, failed_stage, stage_bytes + SCALAR_BYTES)
                   + profile.transfer_seconds(failed_stage + 1, failed_stage, stage_bytes + SCALAR_BYTES))
    else:
        raise UnsupportedRecoveryError(f"no recovery cost defined for {kind.value}")
    return params.node_startup_seconds + seconds


def train_time(iterations_to_target: int, iteration_seconds: Optional[float], trace: FailureTrace,
               strategy: Strategy, profile: NetworkProfile, params: CostParams) -> TrainTime:
    """
    Wall-clock time to complete `iterations_to_target` model iterations while the
    trace's failures (keyed by executed step) hit the pipeline. Checkpointing
    replays the iterations since the last snapshot after every failure.
    """
    config = as_strategy(strategy)
    if iterations_to_target < 0:
        raise ConfigurationError("iterations_to_target must be nonnegative")
    events = {} if config.kind == StrategyKind.NO_FAILURES else trace.by_iteration()
    per_iteration = iteration_cost(config, profile, params).breakdown
    if iteration_seconds is None:
        iteration_seconds = per_iteration.total
    elif per_iteration.total > 0:
        per_iteration = per_iteration.scaled(iteration_seconds / per_iteration.total)

    recovery, lost_iterations, recoveries = 0.0, 0, 0
    progress, step = 0, 0
    while progress < iterations_to_target:
        failed = events.get(step, ())
        if failed:
            if config.kind == StrategyKind.CHECKPOINTING:
                check_recoverable(config, profile.num_stages, failed, iteration=step)
                recovery += recovery_time(config, profile, params, failed[0])
                lost = progress % config.checkpoint_interval
                lost_iterations += lost
                progress -= lost
                recoveries += 1
            else:
                check_recoverable(config, profile.num_stages, failed, iteration=step)
                for stage in failed:
                    recovery += recovery_time(config, profile, params, stage)
                    recoveries += 1
        progress += 1
        step += 1

    base = per_iteration.scaled(iterations_to_target)
    breakdown = TimeBreakdown(
        compute=base.compute,
        communication=base.communication,
        checkpoint_overhead=base.checkpoint_overhead,
        recovery=recovery,
        rollback_lost=lost_iterations * iteration_seconds,
    )
    return TrainTime(breakdown.total / SECONDS_PER_HOUR, breakdown, step, recoveries)
