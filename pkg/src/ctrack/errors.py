"""Exception hierarchy shared across the package."""


class CTError(Exception):
    """Base class for all package errors."""


class InvalidInputError(CTError, ValueError):
    pass


class DegenerateInputError(InvalidInputError):
    """Input has no spread (all values equal, empty class, ...)."""


class OrderingError(CTError):
    """An epoch was recorded out of sequence for some sample."""


class InsufficientHistoryError(CTError):
    pass


class NumericFailureError(CTError, FloatingPointError):
    pass


class FormatError(CTError):
    """Malformed binary log or CSV file."""

    def __init__(self, message: str, offset: int | None = None, line: int | None = None):
        where = []
        if offset is not None:
            where.append(f"byte offset {offset}")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.offset = offset
        self.line = line


class ConfigError(CTError):
    pass
