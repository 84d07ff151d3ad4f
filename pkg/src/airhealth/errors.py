"""Exception types shared across the package.

Every error that crosses a module boundary is one of these, so callers
(CLI, HTTP handlers) can map failures to exit codes / structured JSON
without string matching.
"""


class AirHealthError(Exception):
    """Base class for all package errors."""


class DimensionError(AirHealthError, ValueError):
    """Array shapes do not line up for the requested operation."""

    def __init__(self, message, left=None, right=None):
        if left is not None and right is not None:
            message = f"{message}: {tuple(left)} vs {tuple(right)}"
        super().__init__(message)
        self.left = tuple(left) if left is not None else None
        self.right = tuple(right) if right is not None else None


class DomainError(AirHealthError, ValueError):
    """Input value outside the mathematical domain of an operation."""


class NumericError(AirHealthError, ArithmeticError):
    """Non-finite value produced where finiteness is guaranteed.

    `where` names the layer or stage that produced it.
    """

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


class DivergenceError(NumericError):
    """Training loss became non-finite. `epoch` is 0-based."""

    def __init__(self, message, epoch):
        super().__init__(message, where=f"epoch {epoch}")
        self.epoch = epoch


class TableOverflowError(AirHealthError, ValueError):
    """Concentration above the breakpoint table's coverage.

    Carries the table's maximum index so the caller may clamp.
    """

    def __init__(self, message, max_index):
        super().__init__(message)
        self.max_index = max_index


class VocabularyError(AirHealthError, ValueError):
    """A categorical value outside the fixed vocabulary."""

    def __init__(self, message, value=None, allowed=None):
        super().__init__(message)
        self.value = value
        self.allowed = list(allowed) if allowed is not None else None


class ConvergenceError(AirHealthError, RuntimeError):
    """Iterative solver exhausted its budget before meeting tolerance.

    `worst_violation` is the largest remaining optimality violation.
    """

    def __init__(self, message, worst_violation=None):
        super().__init__(message)
        self.worst_violation = worst_violation


class DataValidationError(AirHealthError, ValueError):
    """A loaded record failed validation. Carries row/field when known."""

    def __init__(self, message, row=None, field=None):
        super().__init__(message)
        self.row = row
        self.field = field


class DecodeError(AirHealthError, ValueError):
    """Image bytes could not be decoded."""


class ConfigError(AirHealthError, ValueError):
    """Configuration file is unparseable or has unknown/invalid keys."""


class ChecksumError(AirHealthError, IOError):
    """Stored artifact bytes do not match their recorded checksum."""


class SchemaVersionError(AirHealthError, IOError):
    """Stored artifact uses a schema version this build does not read."""


class ArtifactError(AirHealthError, IOError):
    """Artifact missing, malformed, or of an unexpected kind."""
