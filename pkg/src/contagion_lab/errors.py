"""Exception types shared across the package.

The CLI maps these onto exit codes: usage errors -> 1, data errors -> 2,
numeric-convergence errors -> 3.
"""


class ContagionLabError(Exception):
    """Base class for all package errors."""


class DataError(ContagionLabError):
    """Invalid or inconsistent input data."""


class ParseError(DataError):
    """Malformed record in an input file."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        loc = ""
        if path is not None:
            loc = f"{path}:"
        if line is not None:
            loc += f"{line}: "
        super().__init__(f"{loc}{message}")


class ConvergenceError(ContagionLabError):
    """An iterative numeric procedure failed to converge."""

    def __init__(self, message: str, iterations: int | None = None):
        self.iterations = iterations
        if iterations is not None:
            message = f"{message} (after {iterations} iterations)"
        super().__init__(message)
