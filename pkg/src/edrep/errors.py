"""Exception types shared across the package."""


class EdrepError(Exception):
    """Base class for all library errors."""


class ValidationError(EdrepError):
    """Input violates a documented precondition or invariant."""


class DimensionError(ValidationError):
    """Matrix shapes are not conformable."""


class NumericError(EdrepError):
    """A computation left (or would leave) the finite floating-point range."""
