"""
Console logging setup
"""

import logging

from rich.console import Console
from rich.logging import RichHandler

LOGGER_NAME = "pfrlab"

_VERBOSITY_LEVELS = {
    -1: logging.WARNING,
    0: logging.INFO,
    1: logging.DEBUG,
}


def setup_logging(verbosity=0, console=None):
    """Attach a RichHandler to the package logger; verbosity -1 is quiet, 0 normal, >=1 debug"""
    level = _VERBOSITY_LEVELS[max(-1, min(1, verbosity))]
    logger = logging.getLogger(LOGGER_NAME)
    for handler in list(logger.handlers):
        if isinstance(handler, RichHandler):
            logger.removeHandler(handler)
    handler = RichHandler(
        console=console or Console(stderr=True),
        show_path=verbosity > 0,
        rich_tracebacks=True,
        markup=False,
    )
    handler.setFormatter(logging.Formatter("%(message)s", datefmt="[%X]"))
    logger.addHandler(handler)
    logger.setLevel(level)
    return logger
