"""Exception types raised across the package."""


class KjepaError(Exception):
    """Base class for package errors."""


class DimensionError(KjepaError, ValueError):
    """Tensor shapes are incompatible with an operation."""


class ContractError(KjepaError, RuntimeError):
    """An API precondition was violated (misuse, not bad data)."""


class NumericError(KjepaError, ArithmeticError):
    """A computation produced non-finite values or failed to converge."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class SpecError(KjepaError, ValueError):
    """An invalid generative recipe (e.g. a non-stationary AR coefficient)."""


class ConfigError(KjepaError, ValueError):
    """Bad configuration key or value."""


class FormatError(KjepaError, ValueError):
    """A dataset, checkpoint or report file could not be parsed."""
