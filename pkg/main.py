import argparse
import logging
import os
import sys

from config.experiment import ExperimentConfig, load_experiment_config
from config.settings import EXPERIMENT_SETTINGS, FAILURE_SETTINGS
from failure_utils.injector import FailureRateSpec, eligible_stages, generate_trace
from failure_utils.trace_io import load_trace, save_trace
from model_utils.tasks import SyntheticTask
from recovery_utils.strategies import StrategyKind
from sim_utils.errors import (
    CheckpointFormatError,
    ConfigurationError,
    NetworkProfileFormatError,
    NumericDivergenceError,
    TraceFormatError,
    UnrecoverableFailureError,
    UnsupportedRecoveryError,
    UsageError,
)
from sim_utils.logging_setup import configure_logging
from workflows.ablations import ablate_checkpoint_freq, ablate_failure_rate, ablation_swap, swap_frame
from workflows.analysis import estimate_delta, probe_recovery_spike, spike_frame
from workflows.compare import compare_strategies, strategy_configs
from workflows.experiment import run_experiment, run_seeds

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_DIVERGED = 1
EXIT_CONFIG = 2
EXIT_UNRECOVERABLE = 3

# Flag name -> ExperimentConfig field
OVERRIDE_FLAGS = {
    "strategy": "strategy",
    "trace": "trace_path",
    "network": "network_path",
    "iters": "total_iterations",
    "p_hour": "p_hour",
    "p_iter": "p_iter",
    "failure_seed": "failure_seed",
    "seeds": "seeds",
    "target_loss": "target_loss",
    "output_dir": "output_dir",
    "workers": "workers",
    "checkpoint_interval": "checkpoint_interval",
    "swap": "swap",
    "cost_preset": "cost_preset",
}


def _int_list(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _float_list(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _add_config_flags(parser):
    parser.add_argument("-c", "--config", help="KEY=value experiment file.")
    parser.add_argument("--strategy", choices=[k.value for k in StrategyKind], help="Recovery strategy.")
    parser.add_argument("--trace", help="Failure trace file shared by the run(s).")
    parser.add_argument("--network", help="Network profile file for the cost model.")
    parser.add_argument("--iters", type=int, help="Total iterations.")
    parser.add_argument("--p-hour", type=float, help="Per-stage hourly failure probability.")
    parser.add_argument("--p-iter", type=float, help="Per-stage per-iteration failure probability.")
    parser.add_argument("--failure-seed", type=int, help="Seed of generated failure traces.")
    parser.add_argument("--seeds", help="Comma-separated model seeds, e.g. 0,1,2.")
    parser.add_argument("--target-loss", type=float, help="Validation loss that counts as converged.")
    parser.add_argument("--output-dir", help="Directory for run outputs.")
    parser.add_argument("--workers", type=int, help="Worker processes for multi-seed runs.")
    parser.add_argument("--checkpoint-interval", type=int, help="Checkpoint every N iterations.")
    parser.add_argument("--swap", action=argparse.BooleanOptionalAction, default=None,
                        help="Force swapped (or standard) microbatch execution.")
    parser.add_argument("--cost-preset", choices=["desk", "medium"], help="Cost model parameters.")


def build_parser():
    parser = argparse.ArgumentParser(prog="checkfree-sim",
                                     description="Simulate pipeline training with stage failures and recovery.")
    parser.add_argument("--log-file", default=None, help="Log file (empty string disables it).")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Train under a failure trace and write metrics.")
    _add_config_flags(run)

    compare = sub.add_parser("compare", help="Compare strategies on one shared trace.")
    _add_config_flags(compare)
    compare.add_argument("--strategies", default="all", help="Comma-separated strategies or 'all'.")

    trace = sub.add_parser("trace-gen", help="Generate a failure trace file.")
    trace.add_argument("--p-hour", type=float, default=0.0)
    trace.add_argument("--p-iter", type=float, default=None)
    trace.add_argument("--iters", type=int, required=True)
    trace.add_argument("--iter-seconds", type=float, default=FAILURE_SETTINGS["ITERATION_SECONDS"])
    trace.add_argument("--seed", type=int, default=0)
    trace.add_argument("--num-stages", type=int, default=4)
    trace.add_argument("--include-edges", action="store_true",
                       help="Let the first and last stage fail as well.")
    trace.add_argument("--stages", help="Explicit comma-separated eligible stages.")
    trace.add_argument("-o", "--output", required=True)

    delta = sub.add_parser("delta", help="Train without failures and estimate layer-omission ratios.")
    _add_config_flags(delta)
    delta.add_argument("--probe-size", type=int, default=EXPERIMENT_SETTINGS["PROBE_SIZE"])

    spike = sub.add_parser("probe-spike", help="Loss spike of each reinitialization after one failure.")
    _add_config_flags(spike)
    spike.add_argument("--stage", type=int, default=2)
    spike.add_argument("--probe-size", type=int, default=EXPERIMENT_SETTINGS["PROBE_SIZE"])

    swap = sub.add_parser("ablate-swap", help="Failure-free runs with and without swapping.")
    _add_config_flags(swap)

    ckpt = sub.add_parser("ablate-checkpoint-freq", help="Checkpoint intervals versus CheckFree+.")
    _add_config_flags(ckpt)
    ckpt.add_argument("--intervals", default="100,50,10")

    rate = sub.add_parser("ablate-failure-rate", help="CheckFree+ at several failure rates.")
    _add_config_flags(rate)
    rate.add_argument("--rates", default=None, help="Comma-separated rates (per hour unless --p-iter is set).")
    return parser


def config_from_args(args) -> ExperimentConfig:
    overrides = {}
    for flag, name in OVERRIDE_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[name] = value
    return load_experiment_config(args.config, overrides)


def _write_frame(frame, directory, filename):
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, filename)
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


def cmd_run(args):
    config = config_from_args(args)
    records = run_seeds(config)
    for record in records:
        print(f"{record.label} seed {record.seed}: final val loss {record.final_val_loss:.6f}, "
              f"{record.summary['wall_steps']} steps, {len(record.events)} recoveries")
    if any(r.unrecoverable for r in records):
        return EXIT_UNRECOVERABLE
    return EXIT_OK


def cmd_compare(args):
    base = config_from_args(args)
    configs = strategy_configs(base, [s.strip() for s in args.strategies.split(",") if s.strip()])
    trace = load_trace(base.trace_path) if base.trace_path else None
    comparison = compare_strategies(configs, trace=trace, output_dir=base.output_dir, write=True)
    print(f"Target validation loss: {comparison.target_loss:.6f}")
    print(comparison.table.to_string(index=False))
    return EXIT_OK


def cmd_trace_gen(args):
    if args.stages:
        stages = tuple(_int_list(args.stages))
    else:
        stages = eligible_stages(args.num_stages, args.include_edges)
    rates = FailureRateSpec(p_hour=args.p_hour, p_iter=args.p_iter, eligible_stages=stages, seed=args.seed)
    rates.check_against(args.num_stages)
    trace = generate_trace(rates, args.iters, args.iter_seconds)
    save_trace(trace, args.output)
    print(f"Wrote {len(trace)} failure events to {args.output}")
    return EXIT_OK


def _trained(config: ExperimentConfig):
    """Failure-free run of the configured model; returns (record, task)."""
    baseline = config.with_overrides(strategy=StrategyKind.NO_FAILURES, trace_path=None, target_loss=None)
    seed = config.seeds[0]
    record = run_experiment(baseline, seed=seed, write=False)
    return record, SyntheticTask.create(config.model_spec(), seed, config.target_init_gain)


def cmd_delta(args):
    config = config_from_args(args)
    record, task = _trained(config)
    probe_inputs, _ = task.probe_set(args.probe_size)
    report = estimate_delta(record.final_state, probe_inputs)
    frame = report.frame()
    print(frame.to_string(index=False))
    print(f"delta (parameter) = {report.delta_param:.6f}, delta (function) = {report.delta_function:.6f}")
    _write_frame(frame, config.output_dir, f"{config.name}-delta.csv")
    return EXIT_OK


def cmd_probe_spike(args):
    config = config_from_args(args)
    record, task = _trained(config)
    probe_inputs, _ = task.probe_set(args.probe_size)
    validation = task.validation_set(config.validation_size)
    measurements = probe_recovery_spike(record.final_state, args.stage, validation, probe_inputs,
                                        seed=config.seeds[0], step=record.final_state.iteration)
    frame = spike_frame(measurements)
    print(frame.to_string(index=False))
    _write_frame(frame, config.output_dir, f"{config.name}-spike.csv")
    return EXIT_OK


def cmd_ablate_swap(args):
    config = config_from_args(args)
    pairs = ablation_swap(config, output_dir=config.output_dir, write=True)
    frame = swap_frame(pairs)
    print(frame.to_string(index=False))
    _write_frame(frame, config.output_dir, f"{config.name}-swap-ablation.csv")
    return EXIT_OK


def cmd_ablate_checkpoint_freq(args):
    config = config_from_args(args)
    comparison = ablate_checkpoint_freq(config, intervals=_int_list(args.intervals),
                                        output_dir=config.output_dir, write=True)
    print(comparison.table.to_string(index=False))
    return EXIT_OK


def cmd_ablate_failure_rate(args):
    config = config_from_args(args)
    rates = _float_list(args.rates) if args.rates else None
    frame = ablate_failure_rate(config, rates=rates, output_dir=config.output_dir, write=True)
    print(frame.to_string(index=False))
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "compare": cmd_compare,
    "trace-gen": cmd_trace_gen,
    "delta": cmd_delta,
    "probe-spike": cmd_probe_spike,
    "ablate-swap": cmd_ablate_swap,
    "ablate-checkpoint-freq": cmd_ablate_checkpoint_freq,
    "ablate-failure-rate": cmd_ablate_failure_rate,
}


def cli_main(argv=None):
    """Parse, dispatch and map simulator errors onto exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse already printed usage to stderr
        return e.code if isinstance(e.code, int) else EXIT_CONFIG

    configure_logging(log_file=args.log_file)
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, UsageError, TraceFormatError, CheckpointFormatError,
            NetworkProfileFormatError, UnsupportedRecoveryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except UnrecoverableFailureError as e:
        print(f"unrecoverable: {e}", file=sys.stderr)
        return EXIT_UNRECOVERABLE
    except NumericDivergenceError as e:
        print(f"diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(cli_main())
