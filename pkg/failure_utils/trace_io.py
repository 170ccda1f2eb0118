"""
Versioned line-oriented trace files:

    checkfree-trace v1 seed=<u64> p_hour=<f64> iter_s=<f64> stages=<list>
    <iter>,<stage>
    ...
"""

import logging
import os

from config.settings import FAILURE_SETTINGS
from failure_utils.injector import FailureEvent, FailureRateSpec, FailureTrace
from sim_utils.errors import ConfigurationError, TraceFormatError

logger = logging.getLogger(__name__)

MAGIC = "checkfree-trace"
VERSION = FAILURE_SETTINGS["TRACE_FORMAT_VERSION"]


def serialize_trace(trace: FailureTrace) -> str:
    rates = trace.rates
    header = (f"{MAGIC} {VERSION} seed={rates.seed} p_hour={rates.p_hour!r} "
              f"iter_s={trace.iteration_seconds!r} "
              f"stages={','.join(str(s) for s in rates.eligible_stages)}")
    if rates.p_iter is not None:
        header += f" p_iter={rates.p_iter!r}"
    lines = [header] + [f"{e.iteration},{e.stage}" for e in trace.events]
    return "\n".join(lines) + "\n"


def _parse_header(line: str):
    tokens = line.split()
    if len(tokens) < 2 or tokens[0] != MAGIC:
        raise TraceFormatError(f"expected '{MAGIC} {VERSION}' header", line=1)
    if tokens[1] != VERSION:
        raise TraceFormatError(f"unsupported trace version '{tokens[1]}'", line=1)
    fields = {}
    for token in tokens[2:]:
        key, sep, value = token.partition("=")
        if not sep:
            raise TraceFormatError(f"malformed header field '{token}'", line=1)
        fields[key] = value
    missing = {"seed", "p_hour", "iter_s", "stages"} - fields.keys()
    if missing:
        raise TraceFormatError(f"header is missing {sorted(missing)}", line=1)
    try:
        stages = tuple(int(s) for s in fields["stages"].split(",") if s)
        rates = FailureRateSpec(
            p_hour=float(fields["p_hour"]),
            eligible_stages=stages,
            seed=int(fields["seed"]),
            p_iter=float(fields["p_iter"]) if "p_iter" in fields else None,
        )
        iteration_seconds = float(fields["iter_s"])
    except (ValueError, ConfigurationError) as e:
        raise TraceFormatError(f"invalid header value: {e}", line=1) from e
    return rates, iteration_seconds


def parse_trace(text: str) -> FailureTrace:
    lines = text.splitlines()
    if not lines:
        raise TraceFormatError("empty trace file", line=1)
    rates, iteration_seconds = _parse_header(lines[0])

    events = []
    previous = None
    eligible = set(rates.eligible_stages)
    for number, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise TraceFormatError(f"expected 'iter,stage', got '{line}'", line=number)
        try:
            event = FailureEvent(int(parts[0]), int(parts[1]))
        except ValueError as e:
            raise TraceFormatError(f"non-integer field in '{line}'", line=number) from e
        if event.stage < 1:
            raise TraceFormatError(f"stage ids are 1-based, got stage {event.stage}", line=number)
        if event.stage not in eligible:
            raise TraceFormatError(f"stage {event.stage} is not in the eligible set", line=number)
        if event.iteration < 0:
            raise TraceFormatError("iteration must be nonnegative", line=number)
        if previous is not None and event <= previous:
            raise TraceFormatError("events must be strictly ascending", line=number)
        events.append(event)
        previous = event

    return FailureTrace(tuple(events), rates, iteration_seconds)


def save_trace(trace: FailureTrace, path):
    directory = os.path.dirname(os.fspath(path))
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(serialize_trace(trace))
    logger.info(f"Saved trace with {len(trace)} events to {path}")


def load_trace(path) -> FailureTrace:
    if not os.path.exists(path):
        raise ConfigurationError(f"trace file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return parse_trace(f.read())
