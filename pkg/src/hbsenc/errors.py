"""Exception types shared across the package."""


class HBSError(Exception):
    """Base class for errors raised by this package."""


class InvalidInputError(HBSError, ValueError):
    """An argument violates an operation's precondition."""


class SingularEvaluationError(HBSError, ValueError):
    """A kernel was evaluated at coincident points."""

    def __init__(self, msg, pair=None):
        super().__init__(msg)
        self.pair = pair


class SingularMatrixError(HBSError, ArithmeticError):
    """A sparse factorization hit a zero pivot."""

    def __init__(self, msg, pivot=-1):
        super().__init__(msg)
        self.pivot = pivot


class SizeGuardError(HBSError, MemoryError):
    """A dense operation was refused because the matrix is too large."""
