"""Exception types shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, data and
schema problems exit 2, numeric failures exit 3.
"""


class RecourseError(Exception):
    """Base class for all package errors."""


class ShapeError(RecourseError, ValueError):
    pass


class ContractError(RecourseError, ValueError):
    """A precondition of an operation was violated by the caller."""


class NumericError(RecourseError, ArithmeticError):
    pass


class DataError(RecourseError, ValueError):
    """Malformed schema, CSV, or model file."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnsupportedVersionError(DataError):
    pass
