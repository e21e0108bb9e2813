"""Numerical evaluation of per-observation model integrals.

Continuous-support integrals use adaptive quadrature over a window supplied
by the model (mean +/- 12 sd for normal-type integrands).  Integer-support
integrals are term-by-term series sums with a consecutive-negligible-terms
stopping rule.  The functions in this module work only from ``log_density``
and ``score``; they are the definition-level route against which any
family-specific closed form or block assembly is cross-checked.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import NumericalError

SUPPORT_CONTINUOUS = "continuous-real"
SUPPORT_COUNTS = "nonnegative-integer"


@dataclass(frozen=True)
class IntegralEngine:
    """Tolerances and caps for quadrature and series summation."""

    abs_tol: float = 1e-12
    rel_tol: float = 1e-10
    max_terms: int = 10_000
    max_subdivisions: int = 200
    tail_run: int = 50  # consecutive tiny terms ending a series

    def integrate(self, fn, lo: float, hi: float) -> float:
        """Adaptive quadrature of ``fn`` on [lo, hi]."""
        with warnings.catch_warnings():
            # roundoff warnings at very tight tolerances are benign here;
            # the returned error estimate is still checked below
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            value, err = integrate.quad(
                fn, lo, hi,
                epsabs=self.abs_tol, epsrel=self.rel_tol,
                limit=self.max_subdivisions,
            )
        if not np.isfinite(value):
            raise NumericalError(f"quadrature returned non-finite value on [{lo}, {hi}]")
        if err > max(self.abs_tol, self.rel_tol * abs(value)) * 1e3:
            raise NumericalError(
                f"quadrature error estimate {err:.3e} too large for value {value:.6e}"
            )
        return value

    def sum_series(self, fn) -> float:
        """Sum fn(0) + fn(1) + ... until ``tail_run`` consecutive terms are
        below ``abs_tol``-scaled noise, capped at ``max_terms``."""
        total = 0.0
        quiet = 0
        for y in range(self.max_terms):
            term = fn(y)
            if not np.isfinite(term):
                raise NumericalError(f"series term non-finite at y={y}")
            total += term
            if abs(term) < 1e-14:
                quiet += 1
                if quiet >= self.tail_run:
                    return total
            else:
                quiet = 0
        raise NumericalError(
            f"series did not settle within {self.max_terms} terms"
        )


DEFAULT_ENGINE = IntegralEngine()


def _window(model, i, theta):
    lo, hi = model.integration_window(i, theta)
    if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
        raise NumericalError(f"invalid integration window ({lo}, {hi})")
    return lo, hi


def density_power_integral(model, i, theta, power, engine=None):
    """int f_i(y)^power dy (or the series analogue on integer support)."""
    engine = engine or DEFAULT_ENGINE
    if model.support == SUPPORT_COUNTS:
        return engine.sum_series(lambda y: model.density(i, float(y), theta) ** power)
    lo, hi = _window(model, i, theta)
    return engine.integrate(lambda y: model.density(i, y, theta) ** power, lo, hi)


def weighted_score_integral(model, i, theta, power, engine=None):
    """int u_i(y) f_i(y)^power dy, componentwise; returns a length-p vector."""
    engine = engine or DEFAULT_ENGINE
    p = model.p
    out = np.empty(p)
    for j in range(p):
        def fn(y, j=j):
            f = model.density(i, y, theta)
            if f == 0.0:
                return 0.0
            return model.score(i, y, theta)[j] * f ** power

        if model.support == SUPPORT_COUNTS:
            out[j] = engine.sum_series(lambda y, fn=fn: fn(float(y)))
        else:
            lo, hi = _window(model, i, theta)
            out[j] = engine.integrate(fn, lo, hi)
    return out


def score_outer_integral(model, i, theta, power, engine=None):
    """int u_i(y) u_i(y)^T f_i(y)^power dy; returns a p x p matrix."""
    engine = engine or DEFAULT_ENGINE
    p = model.p
    out = np.empty((p, p))
    for a in range(p):
        for b in range(a, p):
            def fn(y, a=a, b=b):
                f = model.density(i, y, theta)
                if f == 0.0:
                    return 0.0
                u = model.score(i, y, theta)
                return u[a] * u[b] * f ** power

            if model.support == SUPPORT_COUNTS:
                val = engine.sum_series(lambda y, fn=fn: fn(float(y)))
            else:
                lo, hi = _window(model, i, theta)
                val = engine.integrate(fn, lo, hi)
            out[a, b] = val
            out[b, a] = val
    return out
