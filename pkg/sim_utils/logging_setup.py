"""
Logging configuration shared by the CLI and the experiment workflows.
"""

import logging

from config.settings import LOGGING_SETTINGS


def configure_logging(log_file=None, level=None):
    """Install file + console handlers on the root logger (idempotent)."""
    root = logging.getLogger()
    if getattr(root, "_ckfree_configured", False):
        return root

    handlers = [logging.StreamHandler()]
    log_file = log_file if log_file is not None else LOGGING_SETTINGS["LOG_FILE"]
    if log_file:
        handlers.insert(0, logging.FileHandler(log_file))

    logging.basicConfig(
        level=level or LOGGING_SETTINGS["LEVEL"],
        format=LOGGING_SETTINGS["FORMAT"],
        handlers=handlers,
    )
    root._ckfree_configured = True
    return root
