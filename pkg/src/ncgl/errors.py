"""Semantic exception hierarchy shared across the toolkit.

Public functions raise these instead of bare ValueError/ArithmeticError so
callers (and the CLI) can map failures to outcomes without string matching.
"""


class NcglError(Exception):
    """Base class for all toolkit errors."""


class InvalidArgumentError(NcglError, ValueError):
    """An argument violates the operation's contract (shape, range, type)."""


class DomainError(NcglError, ValueError):
    """Inputs are outside the mathematical domain (e.g. KL without domination)."""


class PreconditionError(NcglError):
    """A stated precondition of the operation does not hold for these inputs."""


class DegenerateInstanceError(NcglError):
    """The instance is degenerate and the requested quantity is undefined."""


class FormatError(NcglError, ValueError):
    """A file or byte stream does not conform to the expected layout."""


class NumericError(NcglError, FloatingPointError):
    """A numeric failure (NaN/overflow) was detected and cannot be recovered."""
