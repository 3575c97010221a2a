"""Exception hierarchy shared by every module.

The CLI maps each family to its own exit code.
"""


class CrossViewError(Exception):
    exit_code = 1


class ValidationError(CrossViewError, ValueError):
    exit_code = 2


class SizingError(ValidationError):
    """Operand dimensions do not conform."""


class ParseError(ValidationError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericError(CrossViewError, ArithmeticError):
    exit_code = 3

    def __init__(self, message, last_good=None):
        super().__init__(message)
        # snapshot of the networks before the failing epoch, if any
        self.last_good = last_good


class StorageError(CrossViewError, OSError):
    exit_code = 4
