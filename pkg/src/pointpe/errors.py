"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class PointPEError(Exception):
    """Base class for all package errors."""


class ConfigError(PointPEError, ValueError):
    """Invalid parameters or configuration (CLI exit code 2)."""


class DataError(PointPEError, ValueError):
    """Malformed or unusable input data (CLI exit code 3)."""


class ParseError(DataError):
    """A text file could not be parsed; ``line`` is 1-based when known."""

    def __init__(self, message: str, path=None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
        if line is not None:
            where = f"{where}:{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class NumericalError(PointPEError, ArithmeticError):
    """A numerical procedure failed (CLI exit code 4)."""


class ResourceLimitError(ConfigError):
    """A request would exceed a configured size cap."""
