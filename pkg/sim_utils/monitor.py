"""
Per-run monitoring of failures and recovery actions.
"""

import logging

logger = logging.getLogger(__name__)

# Warn when more than this fraction of executed steps ended in a failure
FAILURE_WARNING_THRESHOLD = 0.05


class RecoveryMonitor:
    """Track recovery actions and simulated recovery time for one run."""

    def __init__(self, run_name=""):
        self.run_name = run_name
        self.stats = self._initialize_stats()

    def _initialize_stats(self):
        return {
            "total_failures": 0,
            "recovery_seconds": 0.0,
            "lost_iterations": 0,
            "actions": {},
            "stages": {},
        }

    def record_recovery(self, action, stage, recovery_seconds=0.0, lost_iterations=0):
        """
        Record one recovery action.

        Args:
            action (str): Recovery action (e.g. 'checkfree_average', 'rollback')
            stage (int): Stage id that failed
            recovery_seconds (float): Simulated seconds spent recovering
            lost_iterations (int): Iterations of progress discarded by a rollback
        """
        self.stats["total_failures"] += 1
        self.stats["recovery_seconds"] += recovery_seconds
        self.stats["lost_iterations"] += lost_iterations

        self.stats["actions"][action] = self.stats["actions"].get(action, 0) + 1
        key = str(stage)
        self.stats["stages"][key] = self.stats["stages"].get(key, 0) + 1

        logger.debug(f"[{self.run_name}] recovery: {action} stage={stage} "
                     f"time={recovery_seconds:.2f}s lost={lost_iterations}")

    def check_failure_pressure(self, executed_steps):
        """Log a warning when the failure rate is unusually high for this run."""
        if executed_steps <= 0:
            return False
        ratio = self.stats["total_failures"] / executed_steps
        if ratio >= FAILURE_WARNING_THRESHOLD:
            logger.warning(
                f"[{self.run_name}] high failure pressure: {ratio:.1%} of steps "
                f"({self.stats['total_failures']} / {executed_steps})"
            )
            return True
        return False

    def get_usage_stats(self):
        """Get a JSON-friendly copy of the counters."""
        return {
            "total_failures": self.stats["total_failures"],
            "recovery_seconds": self.stats["recovery_seconds"],
            "lost_iterations": self.stats["lost_iterations"],
            "actions": dict(sorted(self.stats["actions"].items())),
            "failures_by_stage": dict(sorted(self.stats["stages"].items(), key=lambda x: int(x[0]))),
        }
