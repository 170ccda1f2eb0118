"""
Error-handling and timing utilities for simulator operations.
"""

import functools
import logging
import time

import numpy as np

from sim_utils.errors import (
    ConfigurationError,
    NumericDivergenceError,
    SimulationError,
    UnrecoverableFailureError,
    UnsupportedRecoveryError,
)

logger = logging.getLogger(__name__)


def ensure_finite(values, what, iteration=None):
    """Raise NumericDivergenceError if `values` holds NaN or inf."""
    arr = np.asarray(values)
    if not np.all(np.isfinite(arr)):
        bad = int(np.size(arr) - np.count_nonzero(np.isfinite(arr)))
        raise NumericDivergenceError(f"{bad} non-finite value(s) in {what}", iteration=iteration)
    return values


def log_simulation_errors(func):
    """Decorator that logs simulator errors by category and re-raises them."""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except ConfigurationError as e:
            logger.error(f"Configuration error in {func.__name__}: {e}")
            raise
        except NumericDivergenceError as e:
            logger.error(f"Numeric divergence in {func.__name__}: {e}")
            raise
        except (UnrecoverableFailureError, UnsupportedRecoveryError) as e:
            logger.warning(f"Unrecoverable failure in {func.__name__}: {e}")
            raise
        except SimulationError as e:
            logger.error(f"Simulation error in {func.__name__}: {e}")
            raise
        except Exception as e:
            logger.error(f"Unexpected error in {func.__name__}: {e}")
            raise
    return wrapper


def track_duration(func):
    """Decorator to log the wall time of long-running operations."""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        start_time = time.perf_counter()
        result = func(*args, **kwargs)
        elapsed_time = time.perf_counter() - start_time
        logger.info(f"{func.__name__} finished - Duration: {elapsed_time:.2f}s")
        return result
    return wrapper
