"""Exception types shared across the package."""


class DimaError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(DimaError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(DimaError, ValueError):
    """Numeric input violates a domain precondition (non-finite, bad simplex, ...)."""


class CapacityError(DimaError, ValueError):
    """A fixed capacity was exceeded (query bank, LM context, vocabulary size)."""


class ConfigError(DimaError, ValueError):
    """Bad run configuration: unknown key, wrong type, or out-of-range value."""


class DatasetParseError(DimaError, ValueError):
    """A dataset line failed to parse.  Carries the 1-based line number."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class CheckpointError(DimaError, ValueError):
    """Checkpoint container is malformed or does not match the run configuration."""


class FeasibilityError(DimaError, RuntimeError):
    """A scene edit could not be placed under its feasibility constraints."""


class NotFoundError(DimaError, KeyError):
    """A referenced id (agent, scene) does not exist."""


class DivergenceError(DimaError, RuntimeError):
    """Training produced a non-finite loss."""
