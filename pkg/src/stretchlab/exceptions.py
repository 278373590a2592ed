"""Exception types raised across the package."""


class DomainError(ValueError):
    """Argument outside the domain of a map, inverse branch or observable."""


class ConfigurationError(ValueError):
    """Inconsistent or invalid experiment configuration."""


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap."""


class OrbitTrappedError(RuntimeError):
    """An orbit failed to return to the base within the safety cap."""


class OrbitDegenerateError(RuntimeError):
    """An orbit landed exactly on a fixed point (0 or 1)."""


class ResolutionError(ValueError):
    """The grid is too coarse for the requested quantity."""


class TailNotNegligibleError(RuntimeError):
    """A truncated correlation series has not decayed enough."""


class InsufficientPointsError(ValueError):
    """Too few usable points for a fit or a check."""
