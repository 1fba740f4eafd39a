"""Exception types shared across the package."""

from __future__ import annotations


class SurgecastError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(SurgecastError):
    """Bad arguments, malformed configuration, or a violated contract."""


class StreamFormatError(SurgecastError):
    """Input data that cannot be read at all (not a per-line skip)."""


class ModelFormatError(SurgecastError):
    """Model file is malformed, truncated, or has an unsupported version."""


class ConvergenceError(SurgecastError):
    """All optimizer starts failed; ``best`` carries the best attempt seen."""

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best
