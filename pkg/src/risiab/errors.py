"""Exception types shared across the package."""


class InvalidParameterError(ValueError):
    """A numeric argument is outside its physical or mathematical domain."""


class ConfigError(Exception):
    """A scenario document or command-line override is invalid."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InvariantError(RuntimeError):
    """An internal consistency check failed during a run."""
