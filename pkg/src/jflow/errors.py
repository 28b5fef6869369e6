"""Exception hierarchy shared by every module."""


class JFlowError(Exception):
    """Base class for all package errors."""


class PositivityLost(JFlowError):
    """A Hermitian field stopped being positive definite (the potential left the admissible set)."""

    def __init__(self, message, min_eig=None):
        super().__init__(message)
        self.min_eig = min_eig


class StepFailure(JFlowError):
    """Time step rejected at the minimum allowed dt."""


class DomainError(JFlowError, ValueError):
    """Argument outside the range where a formula is defined."""


class MonitorViolation(JFlowError):
    """A runtime estimate monitor found a violated inequality."""

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


class SolverStall(JFlowError):
    """Krylov inner solve stagnated above the acceptable residual."""


class NoConvergence(JFlowError):
    """Newton iteration hit its iteration cap."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ConfigError(JFlowError, ValueError):
    """Invalid experiment configuration; ``field`` names the offending entry."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
