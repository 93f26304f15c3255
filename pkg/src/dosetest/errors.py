"""Exception hierarchy shared across the package.

Every error carries the exit code the command line interface maps it to:
2 for configuration problems, 3 for data problems, 4 for numerical
failures (non-convergence, rank deficiency).
"""


class DoseTestError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigurationError(DoseTestError):
    """Invalid or inconsistent configuration (columns, dimensions, flags)."""

    exit_code = 2


class UnsupportedOperationError(ConfigurationError):
    """Operation requires information that is unavailable in this context."""


class DataError(DoseTestError):
    """Input data violates a precondition (non-finite, degenerate, too small)."""

    exit_code = 3


class ParseError(DataError):
    """A cell could not be parsed; message names the offending row."""


class FileError(DataError):
    """Expected input file or directory is missing or unreadable."""


class ConvergenceError(DoseTestError):
    """Iterative solver failed to reach its tolerance.

    Attributes
    ----------
    grad_norm : float or None
        Last gradient sup-norm seen before giving up.
    best : object or None
        Best iterate found, for post-mortem inspection.
    """

    exit_code = 4

    def __init__(self, message, grad_norm=None, best=None):
        super().__init__(message)
        self.grad_norm = grad_norm
        self.best = best


class ConditioningError(DoseTestError):
    """Design matrix is rank deficient or a linear solve is singular."""

    exit_code = 4
