"""
Error Types Module

Exception hierarchy shared by the library and the command-line runner.
Library code raises these; only main.py turns them into exit codes.
"""

from typing import Any, Dict, Optional


class JpaError(Exception):
    """Base class for all joint association errors."""

    exit_code = 1

    def __init__(self, message: str, context: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.context = context or {}

    def to_dict(self) -> Dict[str, Any]:
        """Machine-readable form printed with --json."""
        return {
            'error': type(self).__name__,
            'message': self.message,
            'context': self.context,
        }


class ConfigError(JpaError, ValueError):
    """Invalid configuration, preset or usage."""

    exit_code = 2


class DataError(JpaError):
    """Input data cannot be processed."""

    exit_code = 3


class StructuralError(DataError, ValueError):
    """Indices, dimensions or identifiers do not line up."""


class DegenerateClassError(DataError, ValueError):
    """A training or calibration set holds a single class."""

    def __init__(self, message: str, pair: Optional[tuple] = None):
        super().__init__(message, {'pair': list(pair) if pair is not None else None})
        self.pair = pair


class InstanceTooLargeError(DataError):
    """An instance exceeds the exact solver's hard cap."""

    def __init__(self, message: str, size: int, cap: int):
        super().__init__(message, {'size': size, 'cap': cap})
        self.size = size
        self.cap = cap


class ModelIncompleteError(DataError, LookupError):
    """The pairwise model has no entry for a joint-type pair."""


class OutOfBoundsError(DataError, IndexError):
    """A location lies outside a score map."""


class FormatVersionError(DataError):
    """A file carries an unknown format name, major version or schema hash."""
