"""Exception types shared across the package."""


class SpotmapError(Exception):
    """Base class for all spotmap errors."""


class DataError(SpotmapError, ValueError):
    """A dataset violates a structural invariant (raised at load)."""


class GraphError(SpotmapError, ValueError):
    """A fusion graph is malformed or cannot be constructed."""


class FuseConvergenceError(SpotmapError, RuntimeError):
    """Graph-fusion subproblem failed to reach the KKT tolerance.

    Carries the best iterate found so callers can inspect or reuse it.
    """

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class DegenerateCurvatureError(SpotmapError, RuntimeError):
    """A region's quadratic curvature collapsed to (numerical) zero."""


class SeparationError(SpotmapError, RuntimeError):
    """Complete separation in a logistic regression fit."""


class StrataError(SpotmapError, ValueError):
    """Post-stratification cell mismatch between sample and targets."""
