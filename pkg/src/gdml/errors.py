"""Exception types shared across the package."""


class GdmlError(Exception):
    """Base class for all package errors."""


class ParseError(GdmlError):
    """Malformed input data; carries the offending line number when known."""

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class ConfigError(GdmlError):
    """Invalid configuration, topology, or experiment spec."""


class TransportError(GdmlError):
    """A node could not be reached or a connection failed."""


class OptimizationError(GdmlError):
    """The optimizer produced a non-finite iterate or failed to make progress."""


class LineSearchError(OptimizationError):
    """Backtracking exhausted its step budget without satisfying descent."""
