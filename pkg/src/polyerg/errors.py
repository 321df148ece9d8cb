"""Exception hierarchy shared by all polyerg modules."""


class PolyergError(Exception):
    """Base class for every error raised by polyerg."""


# geometry
class NonConvex(PolyergError):
    pass


class DegenerateEdge(PolyergError):
    pass


class TooFewVertices(PolyergError):
    pass


class VertexHit(PolyergError):
    """A boundary point (or a ray landing) is within tolerance of a vertex."""

    def __init__(self, s, vertex=None):
        self.s = s
        self.vertex = vertex
        super().__init__(f"arclength {s!r} is within tolerance of vertex {vertex}")


# billiard
class Tangency(PolyergError):
    pass


class SingularPoint(PolyergError):
    pass


class ResolutionTooCoarse(PolyergError):
    pass


class FacingParallelSides(PolyergError):
    pass


class OrbitTruncated(PolyergError):
    pass


# slap map / piecewise expanding maps
class DepthExplosion(PolyergError):
    pass


class NotExpanding(PolyergError):
    pass


class EigSolveFailure(PolyergError):
    pass


class AmbiguousSupport(PolyergError):
    pass


class WordExplosion(PolyergError):
    pass


class UnresolvedBoundary(PolyergError):
    pass


# srb
class TooManyTruncatedOrbits(PolyergError):
    pass


class UnmatchedSupport(PolyergError):
    pass


class VertexArg(PolyergError):
    pass


class EpsTooLarge(PolyergError):
    pass


class MissingOrders(PolyergError):
    pass


class NewtonDiverged(PolyergError):
    pass


class NotHyperbolic(PolyergError):
    pass


class ConfinementViolated(PolyergError):
    """A post-transient sample left the strip |theta| <= (pi/2) lambda(f)."""


class Mismatch(PolyergError):
    def __init__(self, message, details=None):
        super().__init__(message)
        self.details = details or {}


# corpus
class AlphaOutOfRange(PolyergError):
    pass


class NotSeparated(PolyergError):
    pass
