"""Exception types raised by the toolkit."""


class SiscError(Exception):
    """Base class for all toolkit errors."""


class InvalidArgument(SiscError, ValueError):
    """An argument violates an operation's precondition."""


class SymmetryViolation(SiscError, ValueError):
    """A spectrum expected to be conjugate-symmetric is not."""


class DomainError(SiscError, ValueError):
    """A value lies outside the domain of a function (e.g. nonpositive dual variable)."""


class NoUpdateError(SiscError):
    """Basis update requested with all coefficients zero."""


class FormatError(SiscError, ValueError):
    """A binary or text file does not match the expected layout."""
