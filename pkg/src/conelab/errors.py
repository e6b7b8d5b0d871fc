"""Exception types shared across the package."""


class ConelabError(Exception):
    """Base class for package-specific failures."""


class GraphDegenerateError(ConelabError):
    """Spherical graph map lost injectivity (Gram determinant <= 0)."""


class NewtonConvergenceError(ConelabError):
    """Off-kernel Newton solve failed to reach the requested residual."""


class UnresolvedTailError(ConelabError):
    """Node data carries energy beyond the resolved spectral band."""


class RadialResolutionError(ConelabError):
    """Radial Gauss grid too coarse for the requested cone-area tolerance."""
