"""Exception hierarchy shared by every module of the package."""


class FracvarError(Exception):
    """Base class for all errors raised by :mod:`fracvar`."""


class DomainError(FracvarError, ValueError):
    """An argument lies outside the domain where an operation is defined."""


class DataError(FracvarError, ValueError):
    """Sampled data is not finite or otherwise unusable."""


class ConvergenceError(FracvarError, RuntimeError):
    """An iterative limit did not settle within its schedule.

    ``distance`` holds the gap between the last two iterates.
    """

    def __init__(self, message, distance=float("nan")):
        super().__init__(message)
        self.distance = distance


class OracleError(ConvergenceError):
    """A reference quadrature failed to reach its accuracy target."""


class EllipticityError(FracvarError, ValueError):
    """A coefficient field violates positivity or ellipticity."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class SolvabilityError(FracvarError, RuntimeError):
    """The discrete system is singular (coercivity is lost)."""


class ConsistencyError(FracvarError, RuntimeError):
    """An internal matrix failed a structural check, e.g. definiteness."""


class ConfigError(FracvarError, ValueError):
    """A run configuration violates its schema or an invariant."""


class ParseError(FracvarError, ValueError):
    """An arithmetic expression could not be parsed or evaluated.

    ``offset`` is the byte offset of the failure and ``expected`` the set of
    tokens that would have been accepted there.
    """

    def __init__(self, message, offset=None, expected=()):
        if offset is not None:
            message = f"{message} at offset {offset}"
            if expected:
                message += f" (expected {', '.join(sorted(expected))})"
        super().__init__(message)
        self.offset = offset
        self.expected = frozenset(expected)
