"""Exception types shared across the library."""


class GeometryError(ValueError):
    """Element geometry is degenerate or unsupported."""


class ConfigError(ValueError):
    """A scenario or domain specification is inconsistent."""


class NumericError(RuntimeError):
    """A numerical procedure failed (non-convergence, overflow, singularity)."""


class OutOfDomainError(ValueError):
    """Requested evaluation points lie outside the composite domain."""
