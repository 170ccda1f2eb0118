"""
Side-by-side comparison of recovery strategies on one shared failure trace.
"""

import logging
import math
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import pandas as pd

from config.experiment import ExperimentConfig
from config.settings import EXPERIMENT_SETTINGS
from cost_utils.accounting import train_time
from failure_utils.injector import FailureTrace
from recovery_utils.strategies import EDGE_CAPABLE, StrategyKind
from sim_utils.errors import ConfigurationError, UnrecoverableFailureError, UnsupportedRecoveryError
from workflows.experiment import RunRecord, cost_params_for, network_for, run_experiment, trace_for

logger = logging.getLogger(__name__)

COMPARISON_COLUMNS = ["strategy", "iteration_s", "iterations_to_target", "reached", "train_hours",
                      "final_val_loss", "unrecoverable", "recoveries"]
COMPARISON_FILE = "comparison.csv"
# Fraction of the no-failure loss drop that defines "converged"
DEFAULT_TARGET_FRACTION = 0.8


@dataclass
class Comparison:
    target_loss: float
    trace: FailureTrace
    table: pd.DataFrame
    records: List[RunRecord] = field(default_factory=list)

    def row(self, strategy: str) -> pd.Series:
        match = self.table[self.table["strategy"] == strategy]
        if match.empty:
            raise KeyError(strategy)
        return match.iloc[0]

    def write(self, directory: str) -> str:
        os.makedirs(directory, exist_ok=True)
        path = os.path.join(directory, COMPARISON_FILE)
        self.table.to_csv(path, index=False, lineterminator="\n")
        logger.info(f"Wrote comparison of {len(self.table)} strategies to {path}")
        return path


def target_from_baseline(initial_loss: float, final_loss: float,
                         fraction: float = DEFAULT_TARGET_FRACTION) -> float:
    """Loss after `fraction` of the drop from initial to final."""
    return initial_loss - fraction * (initial_loss - final_loss)


def baseline_target(config: ExperimentConfig, seed: int, fraction: float = DEFAULT_TARGET_FRACTION) -> float:
    """Run the failure-free baseline to the full iteration count and derive a target loss from it."""
    baseline = config.with_overrides(strategy=StrategyKind.NO_FAILURES, target_loss=None, swap=False)
    record = run_experiment(baseline, seed=seed, write=False)
    target = target_from_baseline(record.summary["initial_val_loss"], record.final_val_loss, fraction)
    logger.info(f"Baseline target loss {target:.6f} (initial {record.summary['initial_val_loss']:.6f}, "
                f"final {record.final_val_loss:.6f})")
    return target


def _check_shared_setup(configs: Sequence[ExperimentConfig]):
    first = configs[0]
    shared = ("total_iterations", "batch_size", "num_microbatches", "validation_size", "target_init_gain",
              "learning_rate", "lr_schedule", "eval_interval", "iteration_seconds")
    for config in configs[1:]:
        if config.model_spec() != first.model_spec():
            raise ConfigurationError(f"{config.name} uses a different model than {first.name}")
        for name in shared:
            if getattr(config, name) != getattr(first, name):
                raise ConfigurationError(f"{config.name} differs from {first.name} in {name}")


def shared_trace(configs: Sequence[ExperimentConfig], seed: int) -> FailureTrace:
    """The single trace every config resolves to; differing traces are refused."""
    traces = [trace_for(config, seed) for config in configs]
    fingerprints = {t.fingerprint() for t in traces}
    if len(fingerprints) > 1:
        labels = [c.strategy_config().label for c in configs]
        raise ConfigurationError(f"strategies {labels} would run against {len(fingerprints)} different traces")
    return traces[0]


def _train_hours(record: RunRecord, config: ExperimentConfig, trace: FailureTrace) -> float:
    iterations = record.summary.get("model_iteration_at_target")
    if iterations is None:
        return math.nan
    try:
        result = train_time(iterations, record.summary["iteration_seconds"], trace, config.strategy_config(),
                            network_for(config), cost_params_for(config))
    except (UnrecoverableFailureError, UnsupportedRecoveryError):
        return math.nan
    return result.hours


def compare_strategies(configs: Sequence[ExperimentConfig], trace: Optional[FailureTrace] = None,
                       seed: Optional[int] = None, target_loss: Optional[float] = None,
                       output_dir: Optional[str] = None, write: bool = False) -> Comparison:
    """
    Run every strategy on the same model, data, seed and trace and tabulate
    iteration time, iterations to the target loss and modeled train time.
    """
    if not configs:
        raise ConfigurationError("compare_strategies needs at least one config")
    configs = list(configs)
    _check_shared_setup(configs)
    seed = configs[0].seeds[0] if seed is None else seed
    if trace is None:
        trace = shared_trace(configs, seed)
    else:
        trace.rates.check_against(configs[0].num_stages)

    if target_loss is None:
        target_loss = configs[0].target_loss
    if target_loss is None:
        target_loss = baseline_target(configs[0], seed)

    rows, records = [], []
    for config in configs:
        config = config.with_overrides(target_loss=target_loss)
        label = config.strategy_config().label
        try:
            record = run_experiment(config, seed=seed, trace=trace, output_dir=output_dir, write=write)
        except UnsupportedRecoveryError as e:
            logger.warning(f"{label} cannot run on this trace: {e}")
            rows.append({"strategy": label, "iteration_s": math.nan, "iterations_to_target": None,
                         "reached": False, "train_hours": math.nan, "final_val_loss": math.nan,
                         "unrecoverable": True, "recoveries": 0})
            continue
        records.append(record)
        reached = record.summary["iterations_to_target"] is not None
        rows.append({
            "strategy": label,
            "iteration_s": record.summary["iteration_seconds"],
            "iterations_to_target": record.summary["iterations_to_target"],
            "reached": reached,
            "train_hours": _train_hours(record, config, trace) if reached else math.nan,
            "final_val_loss": record.final_val_loss,
            "unrecoverable": record.unrecoverable,
            "recoveries": len(record.events),
        })

    comparison = Comparison(target_loss, trace, pd.DataFrame(rows, columns=COMPARISON_COLUMNS), records)
    if write:
        comparison.write(output_dir or configs[0].output_dir)
    return comparison


def strategy_configs(base: ExperimentConfig, strategies: Sequence[str]) -> List[ExperimentConfig]:
    """One config per strategy name; 'all' expands to every failure-handling strategy."""
    names: List[str] = []
    for name in strategies:
        if name == "all":
            names.extend(k.value for k in StrategyKind if k != StrategyKind.NO_FAILURES)
        else:
            names.append(name)
    kinds = []
    for name in names:
        try:
            kinds.append(StrategyKind(name))
        except ValueError as e:
            raise ConfigurationError(f"unknown strategy '{name}'") from e
    include_edges = base.include_edge_stages
    if include_edges is None:
        # Edge stages fail only if every compared strategy can bring them back
        include_edges = all(k in EDGE_CAPABLE for k in kinds)
    return [base.with_overrides(strategy=kind, include_edge_stages=include_edges) for kind in kinds]


def milestone_targets(initial_loss: float, final_loss: float,
                      fractions: Sequence[float] = EXPERIMENT_SETTINGS["MILESTONE_FRACTIONS"]) -> List[float]:
    return [target_from_baseline(initial_loss, final_loss, f) for f in fractions]
