"""
Per-microbatch stage execution orders: standard, and the out-of-order variant
that trades the first two and the last two stages on half the microbatches.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Tuple

from model_utils.spec import ModelSpec
from sim_utils.errors import ConfigurationError


class ScheduleMode(str, Enum):
    STANDARD = "standard"
    SWAPPED_HALF = "swapped_half"


@dataclass(frozen=True)
class ExecutionOrder:
    """Stage ids in execution order; E always runs first and E_inv last."""

    sequence: Tuple[int, ...]

    def __post_init__(self):
        sequence = tuple(int(s) for s in self.sequence)
        if sorted(sequence) != list(range(1, len(sequence) + 1)):
            raise ConfigurationError(f"execution order {sequence} is not a permutation of 1..{len(sequence)}")
        object.__setattr__(self, "sequence", sequence)

    @classmethod
    def standard(cls, num_stages: int) -> "ExecutionOrder":
        return cls(tuple(range(1, num_stages + 1)))

    @classmethod
    def swapped(cls, num_stages: int) -> "ExecutionOrder":
        """(2, 1, 3, ..., s-2, s, s-1); for two stages the single pair is swapped."""
        if num_stages == 2:
            return cls((2, 1))
        if num_stages < 4:
            raise ConfigurationError(
                f"swapping first-two and last-two stages needs s = 2 or s >= 4, got s = {num_stages}"
            )
        order = list(range(1, num_stages + 1))
        order[0], order[1] = order[1], order[0]
        order[-2], order[-1] = order[-1], order[-2]
        return cls(tuple(order))

    @property
    def num_stages(self) -> int:
        return len(self.sequence)

    @property
    def is_standard(self) -> bool:
        return self.sequence == tuple(range(1, self.num_stages + 1))

    def __iter__(self):
        return iter(self.sequence)


@dataclass(frozen=True)
class MicrobatchSchedule:
    num_microbatches: int
    orders: Tuple[ExecutionOrder, ...]
    mode: ScheduleMode = ScheduleMode.STANDARD

    @property
    def swapped_count(self) -> int:
        return sum(1 for order in self.orders if not order.is_standard)

    @property
    def standard_count(self) -> int:
        return self.num_microbatches - self.swapped_count


def build_schedule(num_microbatches: int, mode, num_stages: int) -> MicrobatchSchedule:
    """Swapped microbatches sit at even positions 0, 2, 4, ...; the rest run in standard order."""
    mode = ScheduleMode(mode)
    if num_microbatches <= 0:
        raise ConfigurationError("num_microbatches must be positive")
    standard = ExecutionOrder.standard(num_stages)
    if mode == ScheduleMode.STANDARD:
        return MicrobatchSchedule(num_microbatches, (standard,) * num_microbatches, mode)

    if num_microbatches % 2:
        raise ConfigurationError(
            f"swapped_half schedule needs an even microbatch count, got {num_microbatches}"
        )
    swapped = ExecutionOrder.swapped(num_stages)
    orders = tuple(swapped if k % 2 == 0 else standard for k in range(num_microbatches))
    return MicrobatchSchedule(num_microbatches, orders, mode)


@dataclass(frozen=True)
class LayerSequence:
    """The composite function an execution order computes, layer by layer."""

    stage_order: Tuple[int, ...]
    layers: Tuple[int, ...]


def effective_function(order: ExecutionOrder, spec: ModelSpec) -> LayerSequence:
    if order.num_stages != spec.num_stages:
        raise ConfigurationError(
            f"order covers {order.num_stages} stages, model has {spec.num_stages}"
        )
    layers = []
    for stage_id in order:
        layers.extend(spec.stage_layers(stage_id))
    return LayerSequence(order.sequence, tuple(layers))
