"""Exception types raised across the package."""


class ControptError(Exception):
    """Base class for all package errors."""


class DomainError(ControptError, ValueError):
    """Input outside the valid domain of an operation."""


class DomainEmptyError(DomainError):
    """Rejection sampling found no member of a domain within its attempt budget."""


class IllConditionedError(ControptError, ArithmeticError):
    """Covariance factorization failed even after jitter escalation."""

    def __init__(self, message, jitter):
        super().__init__(f"{message} (last jitter tried: {jitter:.3e})")
        self.jitter = jitter


class FitError(ControptError):
    """Every hyperparameter start failed to produce a factorizable covariance."""


class EvaluationError(ControptError):
    """The objective returned a non-finite value.

    The run state gathered up to the failure is attached as ``partial``.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial
