"""
Seeded whole-stage failure traces.

Each (iteration, stage) pair fails independently. The uniform draw for a pair
comes from a Philox generator keyed by the seed, with the iteration and the
stage placed in its counter. A trace is therefore a pure function of its
inputs, and any (iteration, stage) pair can be regenerated on its own.
"""

import hashlib
import logging
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from config.settings import FAILURE_SETTINGS
from sim_utils.errors import ConfigurationError

logger = logging.getLogger(__name__)

SECONDS_PER_HOUR = 3600.0
UINT64_MASK = (1 << 64) - 1


class FailureRateSpec(BaseModel):
    """Per-stage failure probability plus the stages allowed to fail."""

    model_config = ConfigDict(frozen=True)

    p_hour: float = 0.0
    eligible_stages: Tuple[int, ...] = ()
    seed: int = 0
    # Per-iteration probability used directly, bypassing the hourly conversion.
    p_iter: Optional[float] = None

    @field_validator("p_hour")
    @classmethod
    def _check_p_hour(cls, value):
        if not 0.0 <= value < 1.0:
            raise ConfigurationError(f"p_hour must lie in [0, 1), got {value}")
        return value

    @field_validator("p_iter")
    @classmethod
    def _check_p_iter(cls, value):
        if value is not None and not 0.0 <= value < 1.0:
            raise ConfigurationError(f"p_iter must lie in [0, 1), got {value}")
        return value

    @field_validator("eligible_stages")
    @classmethod
    def _check_stages(cls, value):
        stages = tuple(sorted(set(int(s) for s in value)))
        if any(s < 1 for s in stages):
            raise ConfigurationError(f"stage ids are 1-based, got {stages}")
        return stages

    @field_validator("seed")
    @classmethod
    def _check_seed(cls, value):
        if not 0 <= value <= UINT64_MASK:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        return value

    def check_against(self, num_stages: int):
        outside = [s for s in self.eligible_stages if s > num_stages]
        if outside:
            raise ConfigurationError(f"eligible stages {outside} exceed the {num_stages} model stages")

    def per_iteration(self, iteration_seconds: float) -> float:
        if self.p_iter is not None:
            return self.p_iter
        return hourly_to_per_iteration(self.p_hour, iteration_seconds)


class FailureEvent(NamedTuple):
    iteration: int
    stage: int


@dataclass(frozen=True)
class FailureTrace:
    """Ordered failure events plus the parameters that generated them."""

    events: Tuple[FailureEvent, ...]
    rates: FailureRateSpec
    iteration_seconds: float

    def __post_init__(self):
        events = tuple(FailureEvent(int(i), int(s)) for i, s in self.events)
        if list(events) != sorted(events):
            raise ConfigurationError("trace events must be sorted by iteration")
        if len(set(events)) != len(events):
            raise ConfigurationError("a stage can fail at most once per iteration")
        eligible = set(self.rates.eligible_stages)
        for event in events:
            if event.stage < 1:
                raise ConfigurationError(f"stage ids are 1-based, got stage {event.stage}")
            if event.stage not in eligible:
                raise ConfigurationError(
                    f"event {tuple(event)} targets stage {event.stage} outside eligible stages {sorted(eligible)}"
                )
            if event.iteration < 0:
                raise ConfigurationError("event iterations must be nonnegative")
        if self.iteration_seconds <= 0:
            raise ConfigurationError("iteration_seconds must be positive")
        object.__setattr__(self, "events", events)

    def __len__(self):
        return len(self.events)

    def by_iteration(self) -> Dict[int, Tuple[int, ...]]:
        grouped: Dict[int, List[int]] = {}
        for event in self.events:
            grouped.setdefault(event.iteration, []).append(event.stage)
        return {it: tuple(stages) for it, stages in grouped.items()}

    def stages_at(self, iteration: int) -> Tuple[int, ...]:
        return tuple(e.stage for e in self.events if e.iteration == iteration)

    def consecutive_failures(self) -> List[Tuple[int, Tuple[int, int]]]:
        """(iteration, (a, a+1)) for every pair of adjacent stages dead at the same boundary."""
        flagged = []
        for iteration, stages in self.by_iteration().items():
            dead = set(stages)
            for stage in sorted(dead):
                if stage + 1 in dead:
                    flagged.append((iteration, (stage, stage + 1)))
        return flagged

    @property
    def has_consecutive_failures(self) -> bool:
        return bool(self.consecutive_failures())

    def truncated(self, num_iterations: int) -> "FailureTrace":
        kept = tuple(e for e in self.events if e.iteration < num_iterations)
        return FailureTrace(kept, self.rates, self.iteration_seconds)

    def fingerprint(self) -> str:
        """Stable digest of the serialized trace, used to prove two runs share it."""
        from failure_utils.trace_io import serialize_trace
        return hashlib.sha256(serialize_trace(self).encode("utf-8")).hexdigest()


def hourly_to_per_iteration(p_hour: float, iteration_seconds: float) -> float:
    """p_iter = 1 - (1 - p_hour)^(iteration_seconds / 3600)."""
    if not 0.0 <= p_hour < 1.0:
        raise ConfigurationError(f"p_hour must lie in [0, 1), got {p_hour}")
    if iteration_seconds <= 0:
        raise ConfigurationError("iteration_seconds must be positive")
    if p_hour == 0.0:
        return 0.0
    return 1.0 - (1.0 - p_hour) ** (iteration_seconds / SECONDS_PER_HOUR)


def stage_failure_probability(p_device: float, devices_per_stage: int) -> float:
    """Chance that all k independent devices serving a stage drop together (p^k)."""
    if not 0.0 <= p_device <= 1.0 or devices_per_stage < 1:
        raise ConfigurationError("need p_device in [0, 1] and at least one device per stage")
    return p_device ** devices_per_stage


def eligible_stages(num_stages: int, include_edges: bool) -> Tuple[int, ...]:
    """All stages, or only the intermediate ones when edge stages cannot be recovered."""
    if include_edges:
        return tuple(range(1, num_stages + 1))
    return tuple(range(2, num_stages))


def stage_draw(seed: int, iteration: int, stage: int) -> float:
    """One uniform draw for an (iteration, stage) pair.

    The pair sits in the high counter words, so each pair owns its own Philox
    block and no two pairs share a draw.
    """
    counter = np.array([0, 0, stage, iteration], dtype=np.uint64)
    generator = np.random.Generator(np.random.Philox(key=seed & UINT64_MASK, counter=counter))
    return float(generator.random())


def iteration_draws(seed: int, iteration: int, num_stages: int) -> np.ndarray:
    """Uniform draws for stages 1..num_stages at one iteration (index stage-1)."""
    return np.array([stage_draw(seed, iteration, stage) for stage in range(1, num_stages + 1)])


def generate_trace(rates: FailureRateSpec, num_iterations: int,
                   iteration_seconds: float = FAILURE_SETTINGS["ITERATION_SECONDS"]) -> FailureTrace:
    if num_iterations <= 0:
        raise ConfigurationError("num_iterations must be positive")
    p_iter = rates.per_iteration(iteration_seconds)
    events = []
    if p_iter > 0.0 and rates.eligible_stages:
        for iteration in range(num_iterations):
            for stage in rates.eligible_stages:
                if stage_draw(rates.seed, iteration, stage) < p_iter:
                    events.append(FailureEvent(iteration, stage))

    trace = FailureTrace(tuple(events), rates, float(iteration_seconds))
    flagged = trace.consecutive_failures()
    logger.info(f"Generated trace: {len(trace)} failures over {num_iterations} iterations "
                f"(p_iter={p_iter:.6f}, adjacent pairs={len(flagged)})")
    return trace
