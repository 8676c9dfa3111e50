"""Logging setup: one rich handler on the package logger."""

import logging

from rich.logging import RichHandler

from .display import console

PACKAGE_LOGGER = "geonav"
_LEVELS = {0: logging.WARNING, 1: logging.INFO}


def configure_logging(verbosity: int = 0) -> logging.Logger:
    """Install (or replace) the RichHandler on the ``geonav`` logger.

    Args:
        verbosity: 0 warnings only, 1 info, 2 or more debug

    Returns:
        The package logger
    """
    logger = logging.getLogger(PACKAGE_LOGGER)
    for handler in list(logger.handlers):
        if isinstance(handler, RichHandler):
            logger.removeHandler(handler)
    handler = RichHandler(console=console, show_path=False, rich_tracebacks=True)
    handler.setFormatter(logging.Formatter("%(message)s", datefmt="[%X]"))
    logger.addHandler(handler)
    logger.setLevel(_LEVELS.get(verbosity, logging.DEBUG))
    logger.propagate = False
    return logger
