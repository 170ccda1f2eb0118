"""
Measurements on a (partially) trained model: how much omitting layers perturbs
it, and how each reinitialization strategy perturbs it after a stage failure.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from model_utils.network import blocks_parameter_vector, evaluate_loss, forward
from model_utils.params import ParameterVector
from pipeline_utils.engine import ModelState
from recovery_utils.coordinator import RecoveryCoordinator
from recovery_utils.strategies import StrategyConfig, StrategyKind
from sim_utils.errors import ConfigurationError

logger = logging.getLogger(__name__)

SPIKE_STRATEGIES = (
    StrategyKind.REINIT_RANDOM,
    StrategyKind.REINIT_COPY,
    StrategyKind.REINIT_UNIFORM_AVG,
    StrategyKind.CHECKFREE,
)


@dataclass(frozen=True)
class DeltaEstimate:
    omitted_layers: Tuple[int, ...]
    param_ratio: float
    function_ratio: float


@dataclass(frozen=True)
class DeltaReport:
    estimates: List[DeltaEstimate]

    @property
    def delta_param(self) -> float:
        return max((e.param_ratio for e in self.estimates), default=0.0)

    @property
    def delta_function(self) -> float:
        return max((e.function_ratio for e in self.estimates), default=0.0)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([
            {"omitted_layers": " ".join(str(l) for l in e.omitted_layers),
             "param_ratio": e.param_ratio, "function_ratio": e.function_ratio}
            for e in self.estimates
        ], columns=["omitted_layers", "param_ratio", "function_ratio"])


def single_layer_masks(num_layers: int) -> List[Tuple[int, ...]]:
    return [tuple(0 if l == omitted else 1 for l in range(1, num_layers + 1))
            for omitted in range(1, num_layers + 1)]


def _model_vector(state: ModelState) -> ParameterVector:
    return ParameterVector.concat([state.edges.layers.flat(), blocks_parameter_vector(state.stages)])


def _masked_model_vector(state: ModelState, mask: Sequence[int]) -> ParameterVector:
    spec = state.spec
    parts = [state.edges.layers.flat()]
    for stage in state.stages:
        for layer, block in zip(spec.stage_layers(stage.stage_id), stage.blocks):
            keep = 1.0 if mask[layer - 1] else 0.0
            parts.extend([block.w1.with_values(keep * block.w1.values),
                          block.w2.with_values(keep * block.w2.values)])
    return ParameterVector.concat(parts)


def _ratio(numerator: float, denominator: float) -> float:
    return numerator / denominator if denominator > 0 else 0.0


def estimate_delta(state: ModelState, probe_inputs, masks: Optional[Sequence[Sequence[int]]] = None) -> DeltaReport:
    """
    For each mask report ||F - m.F|| / ||F|| over all weights and the relative
    change of the probe outputs; the bound is the maximum over the family.
    """
    spec = state.spec
    masks = single_layer_masks(spec.num_layers) if masks is None else masks
    full_vector = _model_vector(state)
    full_out = forward(spec, state.edges.layers, state.stages, probe_inputs).predictions
    full_norm = float(np.linalg.norm(full_out))

    estimates = []
    for mask in masks:
        mask = tuple(int(m) for m in mask)
        if len(mask) != spec.num_layers or any(m not in (0, 1) for m in mask):
            raise ConfigurationError(f"mask must be a 0/1 vector over {spec.num_layers} layers")
        masked_vector = _masked_model_vector(state, mask)
        param_ratio = _ratio(np.sqrt(full_vector.squared_distance(masked_vector)), full_vector.norm())
        out = forward(spec, state.edges.layers, state.stages, probe_inputs, layer_mask=mask).predictions
        function_ratio = _ratio(float(np.linalg.norm(out - full_out)), full_norm)
        omitted = tuple(l for l, m in enumerate(mask, start=1) if not m)
        estimates.append(DeltaEstimate(omitted, param_ratio, function_ratio))

    report = DeltaReport(estimates)
    logger.info(f"Estimated delta over {len(estimates)} masks: parameter {report.delta_param:.4f}, "
                f"function {report.delta_function:.4f}")
    return report


@dataclass(frozen=True)
class SpikeMeasurement:
    strategy: str
    reduction_error: float
    function_error: float
    loss_before: float
    loss_after: float

    @property
    def spike(self) -> float:
        return self.loss_after - self.loss_before


def probe_recovery_spike(state: ModelState, stage_id: int, validation, probe_inputs,
                         seed: int = 0, strategies: Sequence[StrategyKind] = SPIKE_STRATEGIES,
                         step: int = 0) -> List[SpikeMeasurement]:
    """Fail one intermediate stage and recover it with each strategy from the same state."""
    spec = state.spec
    if not 1 < stage_id < spec.num_stages:
        raise ConfigurationError(f"stage {stage_id} is not an intermediate stage")
    inputs, targets = validation
    loss_before = evaluate_loss(spec, state.edges.layers, state.stages, inputs, targets)
    reference = forward(spec, state.edges.layers, state.stages, probe_inputs).predictions

    measurements = []
    for kind in strategies:
        coordinator = RecoveryCoordinator(StrategyConfig(kind=kind), spec, state, seed)
        recovered, actions = coordinator.recover(state, [stage_id], step=step)
        out = forward(spec, recovered.edges.layers, recovered.stages, probe_inputs).predictions
        diff = out - reference
        measurements.append(SpikeMeasurement(
            strategy=kind.value,
            reduction_error=actions[0].reduction_error,
            function_error=float(np.sum(diff * diff)),
            loss_before=loss_before,
            loss_after=evaluate_loss(spec, recovered.edges.layers, recovered.stages, inputs, targets),
        ))
    return measurements


def spike_frame(measurements: Sequence[SpikeMeasurement]) -> pd.DataFrame:
    return pd.DataFrame([
        {"strategy": m.strategy, "reduction_error": m.reduction_error, "function_error": m.function_error,
         "loss_before": m.loss_before, "loss_after": m.loss_after, "spike": m.spike}
        for m in measurements
    ])


def spike_follows_error(measurements: Sequence[SpikeMeasurement]) -> bool:
    """True when ordering strategies by reduction error also orders their loss spikes."""
    ordered = sorted(measurements, key=lambda m: m.reduction_error)
    spikes = [m.spike for m in ordered]
    return all(a <= b for a, b in zip(spikes, spikes[1:]))
