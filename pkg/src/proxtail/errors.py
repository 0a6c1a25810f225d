"""Exception types shared across the package."""


class ProxTailError(Exception):
    """Base class for errors raised by proxtail."""


class ArgumentError(ProxTailError, ValueError):
    """An argument violates an operation's precondition."""


class DomainError(ArgumentError):
    """A parameter lies outside the domain on which a formula is valid."""


class NumericError(ProxTailError, ArithmeticError):
    """A numerical procedure failed (non-finite value, no convergence)."""

    def __init__(self, message, iteration=None, best=None):
        super().__init__(message)
        self.iteration = iteration
        self.best = best
