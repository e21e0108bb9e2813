"""Model families for independent but non-identically distributed data.

A family supplies, per observation index i, a log density and its score in
the common parameter.  Everything downstream (estimating equations, sandwich
covariances, influence functions) is built from those two callables plus the
per-observation integrals, for which subclasses may install fast closed-form
or vectorized routes; the base-class routes integrate the definitions
numerically.
"""

from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np

from . import integrals
from .errors import DomainError
from .integrals import SUPPORT_CONTINUOUS, SUPPORT_COUNTS

__all__ = ["ModelFamily", "SUPPORT_CONTINUOUS", "SUPPORT_COUNTS", "as_param_vector"]


def as_param_vector(values, p=None) -> np.ndarray:
    """Validate and return a parameter vector as a 1-D float array."""
    theta = np.atleast_1d(np.asarray(values, dtype=float))
    if theta.ndim != 1 or theta.size < 1:
        raise ValueError("parameter vector must be one-dimensional and non-empty")
    if not np.all(np.isfinite(theta)):
        raise DomainError("parameter vector has non-finite entries")
    if p is not None and theta.size != p:
        raise ValueError(f"parameter vector has length {theta.size}, expected {p}")
    return theta


class ModelFamily(ABC):
    """n per-observation densities f_{i,theta} sharing one parameter theta."""

    n: int
    p: int
    support: str

    @abstractmethod
    def log_density(self, i: int, y: float, theta: np.ndarray) -> float:
        """log f_i(y; theta)."""

    @abstractmethod
    def score(self, i: int, y: float, theta: np.ndarray) -> np.ndarray:
        """d/dtheta log f_i(y; theta), length p."""

    def density(self, i, y, theta) -> float:
        return float(np.exp(self.log_density(i, y, theta)))

    def integration_window(self, i, theta):
        """(lo, hi) quadrature window for continuous support."""
        raise NotImplementedError(
            "continuous-support families must supply an integration window"
        )

    def in_domain(self, theta) -> bool:
        """Whether theta lies in the parameter domain."""
        return bool(np.all(np.isfinite(theta)))

    def validate_data(self, data) -> np.ndarray:
        data = np.asarray(data, dtype=float).ravel()
        if data.size != self.n:
            raise DomainError(f"expected {self.n} observations, got {data.size}")
        if not np.all(np.isfinite(data)):
            raise DomainError("observations contain non-finite values")
        if self.support == SUPPORT_COUNTS:
            if np.any(data < 0) or np.any(data != np.round(data)):
                raise DomainError("integer-support data must be nonnegative integers")
        return data

    def default_init(self, data) -> np.ndarray:
        """Cheap starting value for the tau = 0 fit."""
        raise NotImplementedError(
            f"{type(self).__name__} provides no default initialization; pass init="
        )

    def param_bounds(self):
        """Box bounds for the objective descent, or None when unconstrained."""
        return None

    # -- per-observation integrals; subclasses may override with fast routes --

    def mass_integral(self, i, theta, tau, engine=None) -> float:
        """int f_i^{1+tau}."""
        return integrals.density_power_integral(self, i, theta, 1.0 + tau, engine)

    def xi_vector(self, i, theta, tau, engine=None) -> np.ndarray:
        """int u_i f_i^{1+tau}; the mean of f^tau-weighted scores."""
        return integrals.weighted_score_integral(self, i, theta, 1.0 + tau, engine)

    def score_outer(self, i, theta, s, engine=None) -> np.ndarray:
        """int u_i u_i^T f_i^{1+s}; s=tau gives the bread term, s=2 tau the meat."""
        return integrals.score_outer_integral(self, i, theta, 1.0 + s, engine)

    def estimating_terms(self, data, theta, tau, engine=None) -> np.ndarray:
        """(1/n) sum_i [f_i^tau(y_i) u_i(y_i) - xi_i]; subclasses vectorize."""
        total = np.zeros(self.p)
        for i in range(self.n):
            logf = self.log_density(i, data[i], theta)
            if not np.isfinite(logf) and tau == 0.0:
                raise DomainError(f"zero density at observation {i}")
            weight = 1.0 if tau == 0.0 else float(np.exp(tau * logf))
            total += weight * self.score(i, data[i], theta) - self.xi_vector(
                i, theta, tau, engine
            )
        return total / self.n

    def objective_value(self, data, theta, tau, engine=None) -> float:
        """(1/n) sum_i [int f_i^{1+tau} - (1 + 1/tau) f_i(y_i)^tau], tau > 0."""
        total = 0.0
        for i in range(self.n):
            logf = self.log_density(i, data[i], theta)
            if np.isnan(logf) or logf == np.inf:
                raise DomainError(f"non-finite density at observation {i}")
            total += self.mass_integral(i, theta, tau, engine)
            total -= (1.0 + 1.0 / tau) * float(np.exp(tau * logf))
        return total / self.n
