"""Exception types shared across the package."""

from .quadrature import AccuracyNotMet


class DomainError(ValueError):
    """An argument lies outside the domain where a quantity is defined."""


class ResolutionError(ValueError):
    """A grid does not resolve the length scale it is asked to represent."""


class InfeasibleError(ValueError):
    """A constraint set is empty (or placement is impossible)."""


class CertificationFailed(AssertionError):
    """A numerical certificate did not hold; ``worst`` carries the offending sample."""

    def __init__(self, message, worst=None):
        super().__init__(message)
        self.worst = worst


class NonConvergence(RuntimeError):
    """An iterative solver hit its iteration cap; the best iterate is attached."""

    def __init__(self, message, best_value=None, best=None):
        super().__init__(message)
        self.best_value = best_value
        self.best = best


__all__ = [
    "AccuracyNotMet",
    "CertificationFailed",
    "DomainError",
    "InfeasibleError",
    "NonConvergence",
    "ResolutionError",
]
