"""Exception types raised across the package."""


class GPTraceError(Exception):
    """Base class for all package errors."""


class ConfigurationError(GPTraceError, ValueError):
    """Invalid user-supplied configuration (hyperparameters, geometry, files)."""


class ConditioningError(GPTraceError, ArithmeticError):
    """A covariance matrix could not be factorised even after jitter escalation."""

    def __init__(self, matrix_name: str, max_jitter: float):
        self.matrix_name = matrix_name
        self.max_jitter = max_jitter
        super().__init__(
            f"Cholesky factorisation of {matrix_name} failed with jitter up to {max_jitter:.3g}"
        )


class LostEdgeError(GPTraceError):
    """Every sampled curve scored zero: the posterior no longer touches any gradient.

    Usually fixed by a larger signal variance or better endpoint estimates.
    """

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
