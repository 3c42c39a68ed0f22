"""Exception types raised across the package."""


class EsfemError(Exception):
    """Base class for all package errors."""


class DegenerateGradient(EsfemError):
    """The level-set gradient vanishes where a normal is required."""


class NoConvergence(EsfemError):
    """A Newton iteration did not converge within its iteration budget."""


class DegenerateTriangle(EsfemError):
    """A mesh element has (numerically) zero area."""


class WrongMotionKind(EsfemError):
    """A mesh motion was used with an operation it does not support."""


class NoExactSolution(EsfemError):
    """The problem has no closed-form solution."""


class SolverDiverged(EsfemError):
    """The linear solver failed to reach the requested residual."""


class DomainError(EsfemError, ValueError):
    """Arguments outside the mathematical domain of a function."""


class EmptySeries(EsfemError, ValueError):
    """An accumulation over an empty series was requested."""


class ConfigError(EsfemError, ValueError):
    """An experiment configuration is invalid."""
