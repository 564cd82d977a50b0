"""Exception types shared across the package."""


class GraphLCError(Exception):
    """Base class for all errors raised by graphlc."""


class BadParameter(GraphLCError, ValueError):
    pass


class DimensionMismatch(GraphLCError, ValueError):
    pass


class NotPositiveDefinite(GraphLCError):
    pass


class Singular(GraphLCError):
    pass


class NoConvergence(GraphLCError):
    """An iterative solver hit its iteration cap.

    ``residual`` carries the last observed change, when known.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class QuadratureFailure(GraphLCError):
    pass


class InfeasibleDegreeSequence(GraphLCError, ValueError):
    pass


class GenerationFailure(GraphLCError):
    pass


class NoEdges(GraphLCError, ValueError):
    pass


class DegreeMismatch(GraphLCError, ValueError):
    pass


class ConfigError(GraphLCError, ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class ConvergenceWarning(UserWarning):
    pass
