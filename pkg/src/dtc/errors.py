"""Exception hierarchy shared by every module.

Each class carries a short ``code`` used by the CLI to report a
machine-readable error class and pick the process exit status.
"""


class DTCError(Exception):
    code = "error"
    exit_status = 1


class ShapeError(DTCError, ValueError):
    code = "shape"
    exit_status = 3


class InvalidSizeError(DTCError, ValueError):
    code = "invalid-size"
    exit_status = 3


class ConfigError(DTCError, ValueError):
    code = "config"
    exit_status = 2


class DataError(DTCError, ValueError):
    code = "data"
    exit_status = 4


class FormatError(DataError):
    code = "format"
    exit_status = 5


class LengthError(DataError):
    code = "length"
    exit_status = 6


class DatasetMissingError(DTCError, FileNotFoundError):
    code = "dataset-missing"
    exit_status = 7


class NumericalError(DTCError, ArithmeticError):
    code = "numerical"
    exit_status = 8


class ConvergenceError(NumericalError):
    """Iteration budget exhausted; ``estimate`` holds the last iterate's value."""

    code = "convergence"

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class DegenerateNetworkError(DTCError):
    code = "degenerate-network"
    exit_status = 9


class UndefinedCorrelationError(DTCError, ValueError):
    code = "undefined-correlation"
    exit_status = 10


class OutputError(DTCError, OSError):
    code = "output"
    exit_status = 11
