"""Exception hierarchy shared by all toricma modules."""


class ToricError(Exception):
    """Base class for every error raised by toricma."""


class PolytopeError(ToricError, ValueError):
    """Invalid polytope input."""


class NonReflexive(PolytopeError):
    pass


class OriginNotInterior(PolytopeError):
    pass


class InconsistentDescription(PolytopeError):
    pass


class UnsupportedDimension(PolytopeError):
    pass


class PointOutsidePolytope(ToricError, ValueError):
    pass


class BarycenterAtOrigin(ToricError):
    pass


class ImproperFace(ToricError, ValueError):
    pass


class KEExists(ToricError):
    """R(X) = 1: the barycenter is the origin, no singular limit is predicted."""


class TailBoundFailure(ToricError):
    pass


class DegenerateWeights(ToricError, ValueError):
    pass


class SolverError(ToricError, RuntimeError):
    """Base class for Monge-Ampere solver failures; carries the failing t."""

    def __init__(self, message, t=None):
        super().__init__(message if t is None else f"{message} (t={t:.6g})")
        self.t = t


class NotConverged(SolverError):
    pass


class ConvexityLost(SolverError):
    pass


class MinimizerAtBoundary(SolverError):
    pass


class TailNotCertified(SolverError):
    pass
