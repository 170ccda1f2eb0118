"""
Exception hierarchy for the stage-failure recovery simulator.
"""

from typing import Iterable, Optional


class SimulationError(Exception):
    """Base class for every error raised by the simulator."""


class ConfigurationError(SimulationError):
    """Invalid dimensions, partitions, schedules or experiment settings."""


class UsageError(SimulationError):
    """An operation was called out of order (e.g. backward before forward)."""


class NumericDivergenceError(SimulationError):
    """A non-finite value appeared in activations, gradients or weights."""

    def __init__(self, message: str, iteration: Optional[int] = None):
        self.iteration = iteration
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)


class UnsupportedRecoveryError(SimulationError):
    """The strategy cannot recover the requested stage at all."""


class UnrecoverableFailureError(SimulationError):
    """A failure pattern the strategy cannot recover from, e.g. adjacent stages."""

    def __init__(self, message: str, iteration: Optional[int] = None,
                 stages: Iterable[int] = ()):
        self.iteration = iteration
        self.stages = tuple(stages)
        super().__init__(message)


class TraceFormatError(SimulationError):
    """Malformed failure-trace file."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CheckpointFormatError(SimulationError):
    """Malformed checkpoint snapshot bytes."""


class NetworkProfileFormatError(SimulationError):
    """Malformed network profile file."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
