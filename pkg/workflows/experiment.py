"""
Convergence run under injected failures, orchestrated as a small LangGraph:
prepare -> train -> report.
"""

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd
from langgraph.graph import StateGraph
from pydantic import BaseModel

from config.experiment import ExperimentConfig, save_resolved_config
from config.settings import EXPERIMENT_SETTINGS
from cost_utils.accounting import CostParams, iteration_time, recovery_time
from cost_utils.network import NetworkProfile, default_profile, load_profile
from failure_utils.injector import FailureTrace, generate_trace
from failure_utils.trace_io import load_trace
from model_utils.network import init_network
from model_utils.optim import schedule_factor
from model_utils.tasks import SyntheticTask, init_rng
from pipeline_utils.engine import ModelState, run_iteration
from pipeline_utils.schedule import build_schedule
from recovery_utils.coordinator import RecoveryCoordinator
from recovery_utils.strategies import StrategyKind
from sim_utils.errors import UnrecoverableFailureError, UnsupportedRecoveryError
from sim_utils.guards import log_simulation_errors, track_duration
from sim_utils.monitor import RecoveryMonitor

logger = logging.getLogger(__name__)

SECONDS_PER_HOUR = 3600.0
METRIC_COLUMNS = ["iter", "train_loss", "val_loss", "wall_hours"]
EVENT_COLUMNS = ["iter", "stage", "action", "reduction_error", "recovery_s"]


@dataclass(frozen=True)
class EvalPoint:
    iter: int
    train_loss: float
    val_loss: float
    wall_hours: float
    model_iteration: int


@dataclass(frozen=True)
class FailureRecord:
    iter: int
    stage: int
    action: str
    reduction_error: float
    recovery_s: float


@dataclass
class RunRecord:
    """Eval points, failure events and the final summary of one (config, seed) run."""

    label: str
    seed: int
    metrics: List[EvalPoint] = field(default_factory=list)
    events: List[FailureRecord] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)
    # In-memory only, for measurements on the trained model
    final_state: Optional[ModelState] = None

    @property
    def unrecoverable(self) -> bool:
        return bool(self.summary.get("unrecoverable", False))

    @property
    def final_val_loss(self) -> float:
        return self.metrics[-1].val_loss if self.metrics else math.nan

    def first_reaching(self, target: float) -> Optional[EvalPoint]:
        for point in self.metrics:
            if point.val_loss <= target:
                return point
        return None

    def iterations_to(self, target: Optional[float]) -> Optional[int]:
        if target is None:
            return None
        point = self.first_reaching(target)
        return point.iter if point else None

    def metrics_frame(self) -> pd.DataFrame:
        rows = [{c: getattr(p, c) for c in METRIC_COLUMNS} for p in self.metrics]
        return pd.DataFrame(rows, columns=METRIC_COLUMNS)

    def events_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(e) for e in self.events], columns=EVENT_COLUMNS)

    def write(self, directory: str):
        os.makedirs(directory, exist_ok=True)
        self.metrics_frame().to_csv(os.path.join(directory, EXPERIMENT_SETTINGS["METRICS_FILE"]),
                                    index=False, lineterminator="\n")
        self.events_frame().to_csv(os.path.join(directory, EXPERIMENT_SETTINGS["EVENTS_FILE"]),
                                   index=False, lineterminator="\n")
        with open(os.path.join(directory, EXPERIMENT_SETTINGS["SUMMARY_FILE"]), "w", encoding="utf-8") as f:
            json.dump(self.summary, f, indent=2, sort_keys=True, default=_json_default)
        logger.info(f"Wrote run record for {self.label} seed {self.seed} to {directory}")


def _json_default(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return str(value)


def cost_params_for(config: ExperimentConfig) -> CostParams:
    overrides = {"schedule": config.pipeline_schedule, "checkpoint_blocking": config.checkpoint_blocking}
    if config.cost_preset == "medium":
        return CostParams.medium_model(**overrides)
    return CostParams(**overrides)


def network_for(config: ExperimentConfig) -> NetworkProfile:
    profile = load_profile(config.network_path) if config.network_path else default_profile(config.num_stages)
    profile.check_stages(config.num_stages)
    return profile


def trace_for(config: ExperimentConfig, seed: int) -> FailureTrace:
    """The trace file if one is configured, else a trace drawn for this model seed."""
    if config.trace_path:
        trace = load_trace(config.trace_path)
        trace.rates.check_against(config.num_stages)
        return trace
    rates = config.rate_spec().model_copy(update={"seed": config.failure_seed + seed})
    return generate_trace(rates, config.total_iterations, config.iteration_seconds)


def run_directory(config: ExperimentConfig, seed: int, output_dir: Optional[str] = None) -> str:
    base = output_dir or config.output_dir
    return os.path.join(base, f"{config.name}-{config.strategy_config().label}-seed{seed}")


class RunContext:
    """Mutable objects shared by the graph nodes of one run."""

    def __init__(self, config: ExperimentConfig, seed: int, trace: FailureTrace):
        self.config = config
        self.seed = seed
        self.trace = trace
        self.spec = config.model_spec()
        self.strategy = config.strategy_config()
        self.task = SyntheticTask.create(self.spec, seed, config.target_init_gain)
        self.validation = self.task.validation_set(config.validation_size)
        edges, stages = init_network(self.spec, init_rng(seed), config.learning_rate)
        self.state = ModelState(self.spec, edges, stages, 0)
        self.schedule = build_schedule(config.num_microbatches, config.schedule_mode, self.spec.num_stages)
        self.coordinator = RecoveryCoordinator(self.strategy, self.spec, self.state, seed)
        self.profile = network_for(config)
        self.params = cost_params_for(config)
        self.iteration_seconds = iteration_time(self.strategy, self.profile, self.params)
        self.monitor = RecoveryMonitor(run_name=f"{self.strategy.label}/seed{seed}")
        self.record = RunRecord(label=self.strategy.label, seed=seed)

    def check_trace(self):
        """Refuse traces whose stages this strategy can never recover."""
        if self.strategy.kind == StrategyKind.NO_FAILURES or self.strategy.recovers_edge_stages:
            return
        edges = {1, self.spec.num_stages} & set(self.trace.rates.eligible_stages)
        if edges:
            raise UnsupportedRecoveryError(
                f"trace lets edge stage(s) {sorted(edges)} fail, which {self.strategy.label} cannot recover"
            )


class ExperimentState(BaseModel):
    config: Optional[Any] = None
    seed: Optional[int] = None
    trace: Optional[Any] = None
    output_dir: Optional[str] = None
    write: bool = True
    context: Optional[Any] = None
    record: Optional[Any] = None


def build_experiment_graph():
    sg = StateGraph(ExperimentState)
    sg.add_node("prepare", prepare_node)
    sg.add_node("train", train_node)
    sg.add_node("report", report_node)
    sg.add_edge("prepare", "train")
    sg.add_edge("train", "report")
    sg.set_entry_point("prepare")
    sg.set_finish_point("report")
    return sg.compile()


def prepare_node(state: ExperimentState):
    config: ExperimentConfig = state.config
    trace = state.trace if state.trace is not None else trace_for(config, state.seed)
    context = RunContext(config, state.seed, trace)
    context.check_trace()
    context.coordinator.prepare(context.state)
    logger.info(f"Prepared {context.strategy.label} seed {state.seed}: {len(trace)} failure events, "
                f"{context.iteration_seconds:.2f}s simulated per iteration")
    return {"context": context}


def _apply_failures(context: RunContext, step: int, failed) -> float:
    """Recover the stages failing at this boundary; returns simulated recovery seconds."""
    state, actions = context.coordinator.recover(context.state, failed, step=step)
    context.state = state
    total = 0.0
    for index, action in enumerate(actions):
        if context.strategy.kind == StrategyKind.CHECKPOINTING and index > 0:
            seconds = 0.0
        else:
            seconds = recovery_time(context.strategy, context.profile, context.params, action.stage)
        total += seconds
        context.record.events.append(FailureRecord(step, action.stage, action.action,
                                                   action.reduction_error, seconds))
        context.monitor.record_recovery(action.action, action.stage, seconds, action.lost_iterations)
    return total


def train_node(state: ExperimentState):
    context: RunContext = state.context
    config = context.config
    events = {} if context.strategy.kind == StrategyKind.NO_FAILURES else context.trace.by_iteration()
    inputs, targets = context.validation
    record = context.record
    elapsed = 0.0
    unrecoverable_reason = None
    target_point = None

    step = 0
    while step < config.total_iterations:
        failed = events.get(step)
        if failed:
            try:
                elapsed += _apply_failures(context, step, failed)
            except (UnrecoverableFailureError, UnsupportedRecoveryError) as e:
                logger.warning(f"Run {record.label} seed {context.seed} is unrecoverable at step {step}: {e}")
                unrecoverable_reason = str(e)
                break

        lr_scale = schedule_factor(context.state.iteration, config.lr_schedule, config.warmup_iterations,
                                   config.total_iterations, config.min_lr_ratio)
        batch = context.task.batch(context.state.iteration, config.batch_size)
        result, context.state = run_iteration(context.state, context.schedule, batch, lr_scale)
        context.coordinator.after_step(context.state)
        elapsed += context.iteration_seconds
        step += 1

        if step % config.eval_interval == 0 or step == config.total_iterations:
            point = EvalPoint(step, result.train_loss, context.state.validation_loss(inputs, targets),
                              elapsed / SECONDS_PER_HOUR, context.state.iteration)
            record.metrics.append(point)
            if config.target_loss is not None and point.val_loss <= config.target_loss:
                target_point = point
                logger.info(f"{record.label} seed {context.seed} reached target loss at step {step}")
                break

    context.monitor.check_failure_pressure(step)
    record.final_state = context.state
    record.summary = {
        "format_version": EXPERIMENT_SETTINGS["FORMAT_VERSION"],
        "name": config.name,
        "strategy": record.label,
        "seed": context.seed,
        "trace_fingerprint": context.trace.fingerprint(),
        "failure_events": len(context.trace),
        "wall_steps": step,
        "final_model_iteration": context.state.iteration,
        "final_val_loss": record.final_val_loss,
        "final_train_loss": record.metrics[-1].train_loss if record.metrics else None,
        "initial_val_loss": context.coordinator.initial_state.validation_loss(inputs, targets),
        "target_loss": config.target_loss,
        "iterations_to_target": target_point.iter if target_point else None,
        "model_iteration_at_target": target_point.model_iteration if target_point else None,
        "iteration_seconds": context.iteration_seconds,
        "total_hours": elapsed / SECONDS_PER_HOUR,
        "unrecoverable": unrecoverable_reason is not None,
        "unrecoverable_reason": unrecoverable_reason,
        "recovery_stats": context.monitor.get_usage_stats(),
        "checkpoints_saved": context.coordinator.checkpoints.saves if context.coordinator.checkpoints else 0,
        "replica_refreshes": context.coordinator.replica_refreshes,
    }
    return {"record": record}


def report_node(state: ExperimentState):
    context: RunContext = state.context
    if state.write:
        directory = run_directory(context.config, context.seed, state.output_dir)
        save_resolved_config(context.config, os.path.join(directory, EXPERIMENT_SETTINGS["RESOLVED_CONFIG_FILE"]))
        state.record.write(directory)
    return {"record": state.record}


@track_duration
@log_simulation_errors
def run_experiment(config: ExperimentConfig, seed: Optional[int] = None, trace: Optional[FailureTrace] = None,
                   output_dir: Optional[str] = None, write: bool = True) -> RunRecord:
    """One deterministic run; a failure the strategy cannot handle ends it early and is flagged."""
    seed = config.seeds[0] if seed is None else seed
    graph = build_experiment_graph()
    result = graph.invoke({"config": config, "seed": seed, "trace": trace,
                           "output_dir": output_dir, "write": write})
    record = result["record"] if isinstance(result, dict) else result.record
    return record


def _run_seed(args):
    config, seed, output_dir, write = args
    record = run_experiment(config, seed=seed, output_dir=output_dir, write=write)
    # Trained states stay in the worker process
    record.final_state = None
    return record


def run_seeds(config: ExperimentConfig, seeds: Optional[Sequence[int]] = None,
              output_dir: Optional[str] = None, workers: Optional[int] = None,
              write: bool = True) -> List[RunRecord]:
    """Run every seed, in worker processes when more than one worker is requested."""
    seeds = list(config.seeds if seeds is None else seeds)
    workers = config.workers if workers is None else workers
    if workers <= 1 or len(seeds) == 1:
        return [run_experiment(config, seed=s, output_dir=output_dir, write=write) for s in seeds]
    jobs = [(config, s, output_dir, write) for s in seeds]
    with ProcessPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(_run_seed, jobs))
