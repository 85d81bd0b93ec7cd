"""Exception types shared across the package."""


class ConehopfError(Exception):
    """Base class for all package errors."""


class ValidationError(ConehopfError):
    """An input violates a documented precondition or invariant."""


class NotPsdError(ValidationError):
    """A matrix required to be positive semi-definite is not."""


class CapExceededError(ConehopfError):
    """A desk-scale resource cap (enumeration, iteration, memory guard) was hit."""


class UnboundedObjectiveError(ConehopfError):
    """An optimization problem was detected to be unbounded."""


class RadiusExhaustedError(ConehopfError):
    """A bounded search found its optimum on the boundary; the radius is too small."""


class InternalError(ConehopfError):
    """An internal numerical routine failed to converge (should not happen)."""
