"""Exception types shared across the package."""


class VarsegError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(VarsegError, ValueError):
    """Invalid configuration, argument, or index (maps to CLI usage errors)."""


class DataFormatError(VarsegError, ValueError):
    """Malformed input file (ragged rows, non-numeric cells, empty body)."""

    def __init__(self, message, row=None, column=None):
        loc = ""
        if row is not None:
            loc += f" at row {row}"
        if column is not None:
            loc += f", column {column}"
        super().__init__(message + loc)
        self.row = row
        self.column = column


class NumericError(VarsegError, RuntimeError):
    """Solver divergence or non-finite values in a numeric routine."""


class SegmentTooShortError(VarsegError, RuntimeError):
    """A detected segment is too short to fit after trimming."""
