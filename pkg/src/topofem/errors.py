"""Exception types raised by the solver and its geometric kernels."""


class TopofemError(Exception):
    """Base class for all package errors."""


class NearCriticalPoint(TopofemError):
    """Spatial gradient of the level set is too small to define a normal."""


class NoConvergence(TopofemError):
    """Newton iteration for a critical point did not converge."""


class OutsideBox(TopofemError):
    """A converged critical point lies outside the search box."""


class NonSmoothField(TopofemError):
    """An operation requiring a C2 level set was given a Lipschitz-only field."""


class Unsupported(TopofemError):
    """Requested feature exists only as a typed placeholder (e.g. d=3)."""


class InvalidRect(TopofemError, ValueError):
    """Bulk rectangle is degenerate or not compatible with the grid size."""


class ContainmentViolation(TopofemError):
    """The new physical domain is not covered by the previous active mesh."""


class SolverDivergence(TopofemError):
    """The linear solver failed to reach the requested tolerance."""


class ConfigError(TopofemError, ValueError):
    """Invalid run configuration."""
