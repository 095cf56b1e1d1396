"""Exception hierarchy.

Every error carries a CLI exit code so the runner can map failures without
inspecting messages.
"""


class StopOUError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class InvalidInputError(StopOUError, ValueError):
    """Malformed or non-finite input (asymmetric C, NaN entries, bad shapes)."""

    exit_code = 2


class ConfigError(InvalidInputError):
    """Configuration file or flag could not be parsed or validated."""

    exit_code = 2


class ModelError(StopOUError):
    """The model violates a structural hypothesis (e.g. singular U or Q_t)."""


class ConditioningError(StopOUError):
    """A factorization failed or is too ill-conditioned to be trusted."""

    def __init__(self, message, log_condition=None):
        super().__init__(message)
        self.log_condition = log_condition


class AccuracyError(StopOUError):
    """A quadrature did not reach the requested relative accuracy."""


class ConsistencyError(StopOUError):
    """Two routes that must agree (rank vs determinant, F >= 0, ...) disagree."""


class DomainError(StopOUError, ValueError):
    """A state lies outside the closed domain where it is required to lie."""

    exit_code = 2


class BandwidthError(StopOUError):
    """A shell/bandwidth is too narrow for the available Monte Carlo sample."""

    def __init__(self, message, suggested_eps=None, shell_count=None):
        super().__init__(message)
        self.suggested_eps = suggested_eps
        self.shell_count = shell_count


class StabilityError(StopOUError):
    """Explicit time step violates the stability bound."""

    def __init__(self, message, suggested_dt=None):
        super().__init__(message)
        self.suggested_dt = suggested_dt
