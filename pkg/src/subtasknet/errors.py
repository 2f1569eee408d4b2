"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes, so keep the split between
data/format problems and numerical failures intact.
"""


class SubtaskNetError(Exception):
    pass


class DimensionError(SubtaskNetError, ValueError):
    """Operand shapes are incompatible."""


class ParameterError(SubtaskNetError, ValueError):
    """A scalar argument is outside its valid range."""


class UsageError(SubtaskNetError, RuntimeError):
    """An API was called in a state where it cannot succeed."""


class ConfigError(SubtaskNetError, ValueError):
    pass


class FormatError(SubtaskNetError, ValueError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalError(SubtaskNetError, ArithmeticError):
    """Non-finite values, divergence, or a controller that never settles."""
