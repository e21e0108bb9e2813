"""Chi-square machinery: series vs independent CDF, quantiles, kstar."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from dpdwald.chisq import (chi2_cdf, chi2_quantile, chi2_sf, kstar,
                           noncentral_chi2_cdf, noncentral_chi2_sf)


def test_central_tail_matches_scipy():
    for df in (1, 2, 5, 20):
        for x in (0.5, 3.84, 12.0, 40.0):
            assert chi2_sf(x, df) == pytest.approx(stats.chi2.sf(x, df), abs=1e-13)
            assert chi2_cdf(x, df) == pytest.approx(stats.chi2.cdf(x, df), abs=1e-13)


def test_quantile_bisection_matches_scipy():
    for df in (1, 3, 20, 25):
        for alpha in (0.5, 0.1, 0.05, 0.01):
            q = chi2_quantile(df, alpha)
            assert q == pytest.approx(stats.chi2.ppf(1 - alpha, df), rel=1e-10)
            assert chi2_sf(q, df) == pytest.approx(alpha, abs=1e-10)


def test_quantile_rejects_bad_alpha():
    with pytest.raises(ValueError):
        chi2_quantile(3, 0.0)


@settings(max_examples=200, deadline=None)
@given(
    df=st.integers(min_value=1, max_value=25),
    delta=st.floats(min_value=0.0, max_value=50.0),
    x=st.floats(min_value=0.0, max_value=90.0),
)
def test_series_agrees_with_independent_cdf(df, delta, x):
    # the package evaluates the weighted-central-tail series; scipy's ncx2 is
    # an independent implementation and serves as the oracle
    assert noncentral_chi2_sf(x, df, delta) == pytest.approx(
        stats.ncx2.sf(x, df, delta), abs=1e-8)


def test_cdf_sf_complement():
    assert noncentral_chi2_cdf(7.0, 3, 4.0) + noncentral_chi2_sf(7.0, 3, 4.0) == \
        pytest.approx(1.0, abs=1e-12)


def test_zero_noncentrality_reduces_to_central():
    assert noncentral_chi2_sf(3.84, 1, 0.0) == pytest.approx(chi2_sf(3.84, 1), abs=1e-15)


def test_tail_monotone_in_noncentrality():
    crit = chi2_quantile(4, 0.05)
    values = [noncentral_chi2_sf(crit, 4, d) for d in np.linspace(0.0, 40.0, 81)]
    assert all(b > a for a, b in zip(values, values[1:]))


def test_kstar_is_twice_the_noncentrality_derivative():
    # independent oracle: central finite differences of the noncentral tail
    for df in (1, 2, 6):
        crit = chi2_quantile(df, 0.05)
        for s in (0.4, 2.0, 9.0, 25.0):
            h = 1e-6 * max(1.0, s)
            fd = (stats.ncx2.sf(crit, df, s + h) - stats.ncx2.sf(crit, df, s - h)) / (2 * h)
            assert kstar(s, df, 0.05) == pytest.approx(2.0 * fd, rel=1e-5, abs=1e-9)


def test_kstar_limit_at_zero():
    df = 3
    crit = chi2_quantile(df, 0.05)
    expected = chi2_sf(crit, df + 2) - chi2_sf(crit, df)
    assert kstar(0.0, df, 0.05) == pytest.approx(expected, abs=1e-14)
    # continuity of the removable singularity
    assert kstar(1e-9, df, 0.05) == pytest.approx(expected, abs=1e-7)


def test_kstar_rejects_negative():
    with pytest.raises(ValueError):
        kstar(-1.0, 2, 0.05)
