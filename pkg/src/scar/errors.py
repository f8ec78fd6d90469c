"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 2, DataError (and
subclasses) -> 3, StoreError / TransportError -> 4.
"""

from __future__ import annotations


class ScarError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(ScarError):
    """Invalid configuration, arguments, or missing input paths."""


class DataError(ScarError):
    """Malformed or inconsistent data content."""


class ParseError(DataError):
    """A line could not be parsed; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class SchemaError(DataError):
    """A record is missing keys or violates a field invariant."""


class DuplicateIdError(DataError):
    """Two records share an id that must be unique."""


class MissingEntryError(DataError):
    """A lookup table has no entry for a required id."""


class StoreError(ScarError):
    """Binary store format or corruption problem."""


class TransportError(ScarError):
    """Remote endpoint unreachable after retries."""


class ProtocolError(ScarError):
    """Remote endpoint returned an unparsable or invalid body."""
