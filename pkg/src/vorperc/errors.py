"""Exception types shared across the package.

The CLI maps these onto exit codes: parameter problems exit 2, resource
problems exit 3.
"""

from __future__ import annotations


class ParameterError(ValueError):
    """An argument is outside its documented domain."""


class StateError(RuntimeError):
    """An operation was called on an object that cannot support it."""


class ResourceError(RuntimeError):
    """A computation would exceed a configured budget."""


class WindowTooSmallError(ResourceError):
    """The padded window ran out before a local computation could finish."""


class ValidationError(ValueError):
    """A user-supplied structure violates its invariants."""


class FitError(ValueError):
    """Too few usable points for a regression.

    ``usable`` carries the points that survived filtering so callers can
    report them.
    """

    def __init__(self, message: str, usable=()):
        super().__init__(message)
        self.usable = list(usable)


class RefineStepError(RuntimeError):
    """A numerical integration step is too coarse for the requested accuracy."""
