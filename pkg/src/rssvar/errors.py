"""Exception types shared across the package."""


class RssVarError(Exception):
    """Base class for all errors raised by rssvar."""


class DegenerateGeometry(RssVarError, ValueError):
    """Two points that must be distinct coincide (within tolerance)."""


class SingularPosition(RssVarError, ValueError):
    """A propagation kernel was evaluated at a node position."""


class QuadratureFailure(RssVarError, ArithmeticError):
    """Adaptive quadrature could not reach the requested tolerance."""


class DivergentTail(RssVarError, ValueError):
    """A semi-infinite shadow integral diverges and no truncation was requested."""


class RegionTooSmall(RssVarError, ValueError):
    """The simulation region misses too much of the shadowed kernel mass."""


class NoScatterers(RssVarError, ValueError):
    """A simulation was requested with zero scatterer density."""


class SchemaMismatch(RssVarError, ValueError):
    """An input CSV header does not match the expected columns."""


class UnknownNodeId(RssVarError, KeyError):
    """A measurement references a node that is absent from the survey."""


class NoOverlap(RssVarError, ValueError):
    """Two surfaces share too few jointly valid bins to be compared."""
