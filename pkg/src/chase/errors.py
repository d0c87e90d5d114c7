"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: configuration and format
problems exit 2, failed checks exit 1, numerical blow-ups exit 3.
"""


class ChaseError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(ChaseError, ValueError):
    """Operands have incompatible shapes; message names both shapes."""


class ConfigError(ChaseError, ValueError):
    """A configuration value violates its contract."""


class DataValidationError(ChaseError, ValueError):
    """A data object violates an invariant; message carries the field path."""


class DegenerateInputError(ChaseError, ValueError):
    """Input is degenerate for the requested operation (e.g. zero variance)."""


class FormatError(ChaseError, ValueError):
    """A file does not conform to its binary format; message carries the byte offset."""


class NonFiniteError(ChaseError, FloatingPointError):
    """An operation produced NaN or Inf."""


class TrainingDiverged(ChaseError, RuntimeError):
    """Training produced a non-finite loss; carries the offending epoch."""

    def __init__(self, epoch, message=""):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")
