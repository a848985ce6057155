class FedSelError(Exception):
    """Base class for library errors."""


class ConfigError(FedSelError, ValueError):
    """Invalid configuration or argument shape.

    ``field`` names the offending configuration key when known.
    """

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class PartitionError(FedSelError):
    """A data partition could not be constructed."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ProjectionUndefined(FedSelError, ArithmeticError):
    """Projection onto a zero-norm global direction."""


class UnpulledArm(FedSelError):
    """Confidence bound requested for an arm with no pulls."""


class SelectionLogicError(FedSelError):
    """Bookkeeping invariant violated (e.g. reward for an unselected client)."""
