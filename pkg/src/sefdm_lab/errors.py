"""Exception hierarchy shared by all modules.

The CLI maps these onto distinct exit codes, so keep the split between
parameter misuse, numerical breakdown, and file-format problems.
"""


class ParameterError(ValueError):
    """Invalid argument: bad shape, range, or inconsistent configuration."""


class DegenerateMatrixError(ParameterError):
    """Input matrix is numerically rank deficient."""

    def __init__(self, message: str, column: int | None = None):
        super().__init__(message)
        self.column = column


class NumericalError(RuntimeError):
    """An iterative routine failed to converge or produced non-finite values."""


class ModelFormatError(ValueError):
    """A model file is corrupt, truncated, or inconsistent with its header."""
