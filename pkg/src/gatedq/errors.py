"""Exceptions shared across the analytic and simulation modules."""


class OutOfRegimeError(ValueError):
    """Model parameters fall outside the regime an analytic routine supports."""


class UnconvergedError(RuntimeError):
    """A routine that requires a converged solution received an unconverged one."""


class InsufficientDataError(ValueError):
    """A statistic was requested from fewer records than it needs."""
