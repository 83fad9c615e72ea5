"""Exception types shared across the package.

The CLI maps these onto exit codes: validation failures exit 1,
numerical failures exit 2.
"""


class BackcastError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(BackcastError, ValueError):
    """Malformed inputs: bad shapes, misaligned bins, schema violations."""


class NumericalError(BackcastError, RuntimeError):
    """A computation produced NaN/Inf or an unsolvable system."""
