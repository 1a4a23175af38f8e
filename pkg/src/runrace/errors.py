"""Exception types raised across the package."""


class RunRaceError(Exception):
    """Base class; ``code`` is the machine-readable error class."""

    code = "error"


class DomainError(RunRaceError, ValueError):
    code = "domain-error"


class InsufficientDataError(DomainError):
    code = "insufficient-data"


class FormatError(RunRaceError, ValueError):
    code = "format-error"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ProtocolError(RunRaceError):
    code = "protocol-error"


class NotFoundError(RunRaceError, KeyError):
    code = "not-found"

    def __str__(self):
        return str(self.args[0]) if self.args else "not found"
