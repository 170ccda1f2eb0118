"""
Ablations: swapped execution on/off, checkpoint frequency and failure frequency.
"""

import logging
import math
import os
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from config.experiment import ExperimentConfig
from config.settings import EXPERIMENT_SETTINGS, FAILURE_SETTINGS
from pipeline_utils.engine import ModelState
from recovery_utils.strategies import StrategyKind
from workflows.compare import (
    Comparison,
    baseline_target,
    compare_strategies,
    milestone_targets,
    shared_trace,
)
from workflows.experiment import RunRecord, run_experiment, trace_for

logger = logging.getLogger(__name__)

CHECKPOINT_INTERVALS = (100, 50, 10)


def stage_distance(state: ModelState, first: int = 1, second: int = 2) -> float:
    """||W_first - W_second|| over the flat weights of two equally sized stages."""
    a = state.stage(first).flat_weights()
    b = state.stage(second).flat_weights()
    return math.sqrt(a.squared_distance(b))


@dataclass
class SwapPair:
    seed: int
    swap_off: RunRecord
    swap_on: RunRecord
    milestones: List[float]
    distance_off: float
    distance_on: float

    def gaps(self) -> List[Optional[int]]:
        """Iterations swap-on needs beyond swap-off per milestone (None if either never got there)."""
        gaps = []
        for target in self.milestones:
            off, on = self.swap_off.iterations_to(target), self.swap_on.iterations_to(target)
            gaps.append(None if off is None or on is None else on - off)
        return gaps

    @property
    def swap_not_faster(self) -> bool:
        return all(g is None or g >= 0 for g in self.gaps())

    @property
    def stages_closer(self) -> bool:
        return self.distance_on < self.distance_off


def _failure_free(config: ExperimentConfig, swap: bool) -> ExperimentConfig:
    return config.with_overrides(strategy=StrategyKind.NO_FAILURES, swap=swap, target_loss=None,
                                 p_hour=0.0, p_iter=None, trace_path=None)


def ablation_swap(config: ExperimentConfig, seeds: Optional[Sequence[int]] = None,
                  fractions: Sequence[float] = EXPERIMENT_SETTINGS["MILESTONE_FRACTIONS"],
                  output_dir: Optional[str] = None, write: bool = False) -> List[SwapPair]:
    """Failure-free runs with and without swapping, paired per seed."""
    seeds = list(config.seeds if seeds is None else seeds)
    off_config = _failure_free(config, swap=False).with_overrides(name=f"{config.name}-swap-off")
    on_config = _failure_free(config, swap=True).with_overrides(name=f"{config.name}-swap-on")

    pairs = []
    for seed in seeds:
        off = run_experiment(off_config, seed=seed, output_dir=output_dir, write=write)
        on = run_experiment(on_config, seed=seed, output_dir=output_dir, write=write)
        milestones = milestone_targets(off.summary["initial_val_loss"], off.final_val_loss, fractions)
        pair = SwapPair(seed, off, on, milestones,
                        stage_distance(off.final_state), stage_distance(on.final_state))
        logger.info(f"Swap ablation seed {seed}: gaps {pair.gaps()}, "
                    f"|W1-W2| off {pair.distance_off:.4f} on {pair.distance_on:.4f}")
        pairs.append(pair)
    return pairs


def swap_frame(pairs: Sequence[SwapPair]) -> pd.DataFrame:
    rows = []
    for pair in pairs:
        for fraction_index, (target, gap) in enumerate(zip(pair.milestones, pair.gaps())):
            rows.append({
                "seed": pair.seed,
                "milestone": fraction_index,
                "target_loss": target,
                "iter_swap_off": pair.swap_off.iterations_to(target),
                "iter_swap_on": pair.swap_on.iterations_to(target),
                "gap": gap,
                "stage_distance_off": pair.distance_off,
                "stage_distance_on": pair.distance_on,
            })
    return pd.DataFrame(rows)


def ablate_checkpoint_freq(config: ExperimentConfig, intervals: Sequence[int] = CHECKPOINT_INTERVALS,
                           seed: Optional[int] = None, target_loss: Optional[float] = None,
                           output_dir: Optional[str] = None, write: bool = False) -> Comparison:
    """Checkpointing at each interval and CheckFree+ against one shared trace."""
    seed = config.seeds[0] if seed is None else seed
    include_edges = True if config.include_edge_stages is None else config.include_edge_stages
    configs = [config.with_overrides(strategy=StrategyKind.CHECKPOINTING, checkpoint_interval=interval,
                                     include_edge_stages=include_edges)
               for interval in intervals]
    configs.append(config.with_overrides(strategy=StrategyKind.CHECKFREE_PLUS, include_edge_stages=include_edges))
    trace = shared_trace(configs, seed)
    return compare_strategies(configs, trace=trace, seed=seed, target_loss=target_loss,
                              output_dir=output_dir, write=write)


def ablate_failure_rate(config: ExperimentConfig, rates: Optional[Sequence[float]] = None,
                        seed: Optional[int] = None, target_loss: Optional[float] = None,
                        output_dir: Optional[str] = None, write: bool = False) -> pd.DataFrame:
    """
    CheckFree+ at several failure rates, all traces drawn from the same failure
    seed. Rates are per-iteration when the config uses `p_iter`, else per hour.
    """
    seed = config.seeds[0] if seed is None else seed
    per_iteration = config.p_iter is not None
    if rates is None:
        rates = sorted(FAILURE_SETTINGS["RATES"].values())
    base = config.with_overrides(strategy=StrategyKind.CHECKFREE_PLUS, trace_path=None)
    if target_loss is None:
        target_loss = base.target_loss if base.target_loss is not None else baseline_target(base, seed)

    rate_field = "p_iter" if per_iteration else "p_hour"
    rows = []
    for rate in rates:
        rated = base.with_overrides(**{rate_field: rate}, target_loss=target_loss,
                                    name=f"{config.name}-rate{rate:g}")
        trace = trace_for(rated, seed)
        record = run_experiment(rated, seed=seed, trace=trace, output_dir=output_dir, write=write)
        rows.append({
            "rate": rate,
            "rate_unit": "iteration" if per_iteration else "hour",
            "failures": len(trace),
            "iterations_to_target": record.summary["iterations_to_target"],
            "final_val_loss": record.final_val_loss,
            "unrecoverable": record.unrecoverable,
        })
    frame = pd.DataFrame(rows)
    if write:
        directory = output_dir or config.output_dir
        os.makedirs(directory, exist_ok=True)
        frame.to_csv(os.path.join(directory, "failure_rate_ablation.csv"), index=False, lineterminator="\n")
    return frame


def nondecreasing(values: Sequence[Optional[float]]) -> bool:
    """Treat a missing value (target never reached) as larger than any reached one."""
    filled = [np.inf if v is None or (isinstance(v, float) and math.isnan(v)) else v for v in values]
    return all(a <= b for a, b in zip(filled, filled[1:]))
