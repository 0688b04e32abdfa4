from __future__ import annotations

import logging
import os
import sys
from typing import Optional, TextIO


def supports_color(stream: Optional[TextIO] = None) -> bool:
    if os.environ.get("NO_COLOR"):
        return False
    if os.environ.get("FORCE_COLOR"):
        return True
    stream = stream or sys.stdout
    return hasattr(stream, "isatty") and stream.isatty()


class Color:
    RESET = "\033[0m"
    BOLD = "\033[1m"
    DIM = "\033[2m"
    RED = "\033[31m"
    GREEN = "\033[32m"
    YELLOW = "\033[33m"
    BLUE = "\033[34m"
    MAGENTA = "\033[35m"
    CYAN = "\033[36m"


def paint(s: str, *styles: str, enable: bool = True) -> str:
    if not enable or not styles:
        return s
    return "".join(styles) + s + Color.RESET


LEVEL_STYLES = {
    logging.DEBUG: (Color.DIM,),
    logging.INFO: (Color.CYAN,),
    logging.WARNING: (Color.YELLOW, Color.BOLD),
    logging.ERROR: (Color.RED, Color.BOLD),
    logging.CRITICAL: (Color.RED, Color.BOLD),
}


class ColorFormatter(logging.Formatter):
    """Formatter that paints the level name."""

    def __init__(self, enable: bool = True, fmt: str = "%(levelname)s %(name)s: %(message)s"):
        super().__init__(fmt)
        self.enable = enable

    def format(self, record: logging.LogRecord) -> str:
        original = record.levelname
        record.levelname = paint(f"{original:<7}", *LEVEL_STYLES.get(record.levelno, ()), enable=self.enable)
        try:
            return super().format(record)
        finally:
            record.levelname = original


def setup_logging(verbosity: int = 0, color: bool = True, stream: Optional[TextIO] = None) -> logging.Logger:
    """Attach one console handler to the ``dcls`` logger; -1 quiet, 0 info, 1 debug."""
    logger = logging.getLogger("dcls")
    for handler in list(logger.handlers):
        if getattr(handler, "_dcls_console", False):
            logger.removeHandler(handler)
    handler = logging.StreamHandler(stream or sys.stderr)
    handler._dcls_console = True
    handler.setFormatter(ColorFormatter(enable=color))
    logger.addHandler(handler)
    logger.setLevel(logging.WARNING if verbosity < 0 else logging.DEBUG if verbosity > 0 else logging.INFO)
    logger.propagate = False
    return logger


def success(message: str, enable: bool = True) -> None:
    print(paint(f"✅ {message}", Color.GREEN, Color.BOLD, enable=enable))


def failure(message: str, enable: bool = True) -> None:
    print(paint(f"❌ {message}", Color.RED, Color.BOLD, enable=enable), file=sys.stderr)
