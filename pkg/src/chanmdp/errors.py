"""Exception hierarchy shared across the package.

Each error class maps to one CLI exit code (see :mod:`chanmdp.cli`).
"""


class ChanMdpError(Exception):
    """Base class for all package errors."""


class ConfigError(ChanMdpError, ValueError):
    """Invalid configuration, weights, thresholds or ranges."""


class ShapeError(ChanMdpError, ValueError):
    """Array length or divisibility mismatch."""


class FilterDesignError(ChanMdpError):
    """Remez exchange did not converge within the iteration cap."""


class InfeasibleSpecError(ChanMdpError, ValueError):
    """Filter specification cannot be met with the requested tap count."""


class SizeError(ChanMdpError, ValueError):
    """Dense expansion requested for a model above the size cap."""


class EncodingError(ChanMdpError, ValueError):
    """Policy or state value does not fit its binary encoding."""


class NonConvergenceError(ChanMdpError):
    """Value iteration hit the iteration cap before reaching tolerance."""

    def __init__(self, message, residual, iterations):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
