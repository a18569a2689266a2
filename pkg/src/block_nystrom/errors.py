"""Exception hierarchy shared by every module of the package."""


class BlockNystromError(Exception):
    """Base class for all errors raised by this package."""


class InvalidSpecError(BlockNystromError, ValueError):
    """A generator spec, configuration value or argument is out of range."""


class NonPositiveRegularizerError(InvalidSpecError):
    pass


class DimensionMismatchError(BlockNystromError, ValueError):
    pass


class TooLargeError(BlockNystromError):
    """A dense oracle was requested above the desk-scale cap."""


class SingularReferenceError(BlockNystromError):
    """The reference matrix of a Loewner comparison is not positive definite."""


class ZeroMassError(BlockNystromError, ValueError):
    """Sampling was requested from an all-zero score vector."""


class EmbeddingFailureError(BlockNystromError):
    """A sketched preconditioner stayed numerically singular after retries."""


class InnerSingularityError(BlockNystromError):
    pass


class MaxIterationsError(BlockNystromError):
    """An iterative solver ran out of iterations.

    The best iterate seen and its relative residual are attached so callers
    can decide whether to accept a partial answer.
    """

    def __init__(self, message, best=None, residual=None, level=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.level = level


class BudgetExceededError(BlockNystromError):
    pass


class KernelBoundError(BlockNystromError, ValueError):
    """A kernel diagonal exceeds the declared bound G squared."""


class EmptyDatasetError(BlockNystromError, ValueError):
    pass


class NotStronglyConvexError(BlockNystromError, ValueError):
    pass
