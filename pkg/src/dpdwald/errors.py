"""Exception types shared across the package."""


class DpdError(Exception):
    """Base class for all package errors."""


class DomainError(DpdError, ValueError):
    """Data or parameters outside the model support/domain."""


class NumericalError(DpdError, RuntimeError):
    """An integral, series, or special-function evaluation failed to converge."""


class ConvergenceError(DpdError, RuntimeError):
    """The estimator did not converge; carries the last iterate."""

    def __init__(self, message, theta_last=None, eq_norm=None, iterations=None):
        super().__init__(message)
        self.theta_last = theta_last
        self.eq_norm = eq_norm
        self.iterations = iterations


class DesignDeficiencyError(DpdError, RuntimeError):
    """A required matrix is (numerically) rank deficient."""

    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class DegenerateAlternativeError(DpdError, ValueError):
    """The alternative coincides with the null in the relevant metric."""
