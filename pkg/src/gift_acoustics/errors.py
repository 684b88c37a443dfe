"""Exception types shared across the package."""


class GiftError(Exception):
    """Base class for package errors."""


class GeometryError(GiftError):
    """Degenerate or invalid geometry (for example a folded patch map)."""


class ConfigError(GiftError):
    """Invalid problem or run configuration."""


class NumericalError(GiftError):
    """Singular system, failed inversion or non-convergence."""
