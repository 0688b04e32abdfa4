"""
Error types raised by dcls.

Every error subclasses both DclsError and the closest builtin so callers can
catch either. The CLI maps ConfigError/StageError to exit code 1 and any other
DclsError to exit code 2.
"""

from __future__ import annotations

from typing import Optional


class DclsError(Exception):
    """Base class for all dcls errors."""


class ConfigError(DclsError, ValueError):
    """Invalid configuration value, unknown key or bad usage."""


class DataError(DclsError, ValueError):
    """Problem with a dataset, a JSONL file or a vocabulary."""

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"{message} at line {line}"
        super().__init__(message)
        self.line = line


class ShapeError(DclsError, ValueError):
    """Length or shape mismatch, including over-long inputs."""


class StageError(DclsError, FileNotFoundError):
    """A prerequisite pipeline stage has not been run."""

    def __init__(self, stage: str, path: Optional[str] = None, what: str = "checkpoint"):
        message = f"{stage} {what} not found"
        if path:
            message += f" ({path})"
        super().__init__(message)
        self.stage = stage


class DivergenceError(DclsError, ArithmeticError):
    """Non-finite loss or gradient during training."""

    def __init__(self, message: str, parameter: Optional[str] = None):
        if parameter:
            message = f"{message} in parameter '{parameter}'"
        super().__init__(f"divergence: {message}")
        self.parameter = parameter
