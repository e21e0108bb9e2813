"""Chi-square tail machinery: central tails, quantiles, and the Poisson-mixture
series for non-central tail probabilities and their noncentrality derivative.

The non-central upper tail is evaluated as

    P(chi2_df(delta) > x) = sum_v  w_v(delta) * P(chi2_{df+2v} > x),

with Poisson weights w_v = exp(-delta/2) (delta/2)^v / v!.  The same series,
differentiated in delta, yields the ``kstar`` factor used by the power
influence function.
"""

from __future__ import annotations

import math

from scipy.special import gammainc, gammaincc

from .errors import NumericalError

#: summation caps / stopping rule for the Poisson-weight series
SERIES_TERM_TOL = 1e-14
SERIES_MAX_TERMS = 10_000

_QUANTILE_TOL = 1e-12


def chi2_cdf(x: float, df: float) -> float:
    """Central chi-square CDF."""
    if x <= 0.0:
        return 0.0
    return float(gammainc(df / 2.0, x / 2.0))


def chi2_sf(x: float, df: float) -> float:
    """Central chi-square upper tail P(chi2_df > x)."""
    if x <= 0.0:
        return 1.0
    return float(gammaincc(df / 2.0, x / 2.0))


def chi2_quantile(df: int, alpha: float) -> float:
    """Upper-alpha quantile of the central chi-square, by bisection on the CDF.

    Returns the value q with P(chi2_df > q) = alpha, accurate to 1e-12.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    lo, hi = 0.0, float(max(4.0 * df, 16.0))
    while chi2_sf(hi, df) > alpha:
        hi *= 2.0
        if hi > 1e12:  # pragma: no cover
            raise NumericalError("chi-square quantile bracket expansion failed")
    while hi - lo > _QUANTILE_TOL * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if chi2_sf(mid, df) > alpha:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _poisson_mixture(x: float, df: int, delta: float, tail) -> float:
    """sum_v w_v(delta) * tail(x, df + 2v) with remaining-mass truncation."""
    if delta < 0.0:
        raise ValueError(f"noncentrality must be >= 0, got {delta}")
    if delta == 0.0:
        return tail(x, df)
    half = delta / 2.0
    w = math.exp(-half)
    cumulative = w
    total = w * tail(x, df)
    v = 0
    while 1.0 - cumulative > SERIES_TERM_TOL:
        v += 1
        if v > SERIES_MAX_TERMS:
            raise NumericalError(
                f"noncentral chi-square series did not converge in "
                f"{SERIES_MAX_TERMS} terms (delta={delta})"
            )
        w *= half / v
        cumulative += w
        total += w * tail(x, df + 2 * v)
    return total


def noncentral_chi2_sf(x: float, df: int, delta: float) -> float:
    """Upper tail P(chi2_df(delta) > x) via the weighted central-tail series."""
    return _poisson_mixture(x, df, delta, chi2_sf)


def noncentral_chi2_cdf(x: float, df: int, delta: float) -> float:
    return _poisson_mixture(x, df, delta, chi2_cdf)


def kstar(s: float, df: int, alpha: float) -> float:
    """The noncentrality derivative factor of the contiguous power series.

    Evaluates exp(-s/2) * sum_v s^{v-1} (2v - s) / (v! 2^v) * P(chi2_{df+2v} > c)
    at the upper-alpha critical value c of chi2_df.  Equals twice the
    derivative of the noncentral upper tail with respect to the
    noncentrality, evaluated at s.  The v=0/v=1 limit is used at s=0, where
    the apparent 1/s singularity is removable.
    """
    if s < 0.0:
        raise ValueError(f"noncentrality must be >= 0, got {s}")
    crit = chi2_quantile(df, alpha)
    if s == 0.0:
        return chi2_sf(crit, df + 2) - chi2_sf(crit, df)
    half = s / 2.0
    w = math.exp(-half)  # Poisson weight w_v = e^{-s/2} (s/2)^v / v!
    total = -w * chi2_sf(crit, df)  # v = 0 term: w_0 * (0 - s)/s = -w_0
    v = 0
    while True:
        v += 1
        if v > SERIES_MAX_TERMS:
            raise NumericalError(
                f"kstar series did not converge in {SERIES_MAX_TERMS} terms (s={s})"
            )
        w *= half / v
        coef = w * (2.0 * v - s) / s
        total += coef * chi2_sf(crit, df + 2 * v)
        if v > half + 1.0 and abs(w) * (2.0 * v / s + 1.0) < SERIES_TERM_TOL:
            break
    return total
