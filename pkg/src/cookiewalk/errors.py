"""Exception and warning types shared across the package."""


class CookieWalkError(Exception):
    """Base class for errors raised by cookiewalk."""


class DomainError(CookieWalkError, ValueError):
    """An argument lies outside the domain where a function is defined."""


class StepCapExceeded(CookieWalkError):
    """A simulation hit its step cap before reaching its stopping condition."""

    def __init__(self, message, steps=None):
        super().__init__(message)
        self.steps = steps


class TruncationTooSevere(CookieWalkError):
    """The certified truncation error of an exact computation exceeds tolerance."""

    def __init__(self, message, bound=None, tolerance=None):
        super().__init__(message)
        self.bound = bound
        self.tolerance = tolerance


class NoConvergence(CookieWalkError):
    """An iterative method did not reach its tolerance within the iteration cap."""


class InsufficientTail(CookieWalkError):
    """Too few support points in the tail-fit window."""


class ResourceError(CookieWalkError, MemoryError):
    """Requested output would exceed the configured memory budget."""


class BoundaryAmbiguityWarning(UserWarning):
    """alpha is within floating-point noise of a regime boundary (0 or 1)."""
