"""Exception types raised across the package."""


class CovarError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(CovarError, ValueError):
    pass


class NotPositiveDefiniteError(CovarError, ValueError):
    pass


class ConvergenceError(CovarError, RuntimeError):
    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


class CurvatureError(CovarError, ValueError):
    """The conditioning driver has non-positive X-curvature, so IS cannot be used."""


class DegenerateISError(CovarError, RuntimeError):
    """Every IS scenario carries zero weight (target below g* everywhere)."""


class InfiniteQuantileError(CovarError, RuntimeError):
    pass


class InfeasibleCIError(CovarError, ValueError):
    def __init__(self, message, min_k=None):
        super().__init__(message)
        self.min_k = min_k


class EmptyBandError(CovarError, ValueError):
    pass


class MissingTruthError(CovarError, ValueError):
    pass
