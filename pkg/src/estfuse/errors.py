"""Exception hierarchy shared by the library and the CLI."""


class EstfuseError(Exception):
    """Base class for every error raised by estfuse."""


class InvalidMomentsError(EstfuseError, ValueError):
    """Variance/covariance triple violates the non-zero-variance assumption."""


class DegenerateInputError(EstfuseError, ValueError):
    """A weight formula would divide by (numerically) zero."""


class PositivityError(EstfuseError, ValueError):
    """A treatment probability is 0 or 1, or a treatment arm is empty."""


class ConfigError(EstfuseError, ValueError):
    """Bad configuration file or command-line override."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None,
                 column: int | None = None):
        super().__init__(message)
        self.key = key
        self.line = line
        self.column = column

    def as_record(self) -> dict:
        return {"error": "config", "message": str(self), "key": self.key,
                "line": self.line, "column": self.column}
