"""Exception hierarchy shared by every module."""


class GraphMAEError(Exception):
    """Base class for all library errors."""


class ValidationError(GraphMAEError, ValueError):
    """Input violates a documented precondition (shapes, ranges, indices)."""


class ParseError(ValidationError):
    """Malformed text input. ``line`` is 1-based when known."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class NumericDomainError(GraphMAEError, ArithmeticError):
    """An op was asked to evaluate outside its mathematical domain."""


class NonFiniteError(GraphMAEError, ArithmeticError):
    """A NaN or Inf appeared in a tensor."""


class FormatError(GraphMAEError, ValueError):
    """Binary file has the wrong magic, is truncated, or is otherwise corrupt."""


class ArchitectureMismatchError(GraphMAEError, ValueError):
    """Checkpoint parameters do not line up with the requested architecture."""
