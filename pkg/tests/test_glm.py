"""GLM machinery: K functions, gamma moments, sandwich assembly, designs."""

import math

import numpy as np
import pytest
from scipy import integrate

from dpdwald.errors import DomainError
from dpdwald.glm import (FixedDesign, NormalLinearModel, PoissonLogModel,
                         design_diagnostics, gamma_integrals,
                         glm_contiguous_delta, glm_sandwich, k_functions,
                         normal_beta_variance, normal_contiguous_delta,
                         normal_gamma_closed, normal_phi_variance,
                         normal_sigma_closed, normal_wald_statistic, s_vector,
                         _poisson_power_moments)
from dpdwald.mdpde import fit_mdpde, sandwich_cov
from dpdwald.robustness import ContaminationSpec, if_mdpde
from dpdwald.wald import LinearHypothesis, wald_composite

TAU_GRID = (0.0, 0.1, 0.3, 0.5, 0.7, 1.0)


# ---------------------------------------------------------------------------
# brute-force oracles, written out from the definitions
# ---------------------------------------------------------------------------

def brute_normal_gamma(phi, s, j, h=None):
    """Quadrature of K_j (K_h) times the normal density to the 1+s power."""
    def dens(r):
        return ((2 * math.pi * phi) ** -0.5 * math.exp(-r * r / (2 * phi))) ** (1 + s)

    def K(r, which):
        if which == 1:
            return r / phi
        return r * r / (2 * phi * phi) - 1 / (2 * phi)

    if h is None:
        fn = lambda r: K(r, j) * dens(r)
    else:
        fn = lambda r: K(r, j) * K(r, h) * dens(r)
    val, _ = integrate.quad(fn, -60, 60, limit=400, epsabs=1e-14, epsrel=1e-13)
    return val


def brute_poisson_gamma(lam, s, moment):
    total = 0.0
    cap = int(lam + 40 * math.sqrt(lam)) + 400
    for y in range(cap):
        logf = -lam + y * math.log(lam) - math.lgamma(y + 1)
        total += (y - lam) ** moment * math.exp((1 + s) * logf)
    return total


# ---------------------------------------------------------------------------
# designs
# ---------------------------------------------------------------------------

def test_design1_cx_matches_printed_value():
    cx = FixedDesign.design1(50, a=1.0, b=2.0).cx()
    np.testing.assert_allclose(cx, [[1.0, 1.5], [1.5, 2.5]], atol=1e-12)


def test_design2_reproducible():
    d1 = FixedDesign.design2(50)
    d2 = FixedDesign.design2(50)
    np.testing.assert_array_equal(d1.X, d2.X)
    assert abs(np.mean(d1.X[:, 1])) < 0.5 and 0.5 < np.std(d1.X[:, 1]) < 1.6


def test_design34_shapes():
    d3 = FixedDesign.design3(50)
    assert d3.X[9, 1] == 10.0
    d4 = FixedDesign.design4(50)
    np.testing.assert_allclose(d4.X[4], [1.0, 0.2, 0.04])


def test_design_csv_round_trip(tmp_path):
    d = FixedDesign.design4(7)
    path = tmp_path / "design.csv"
    d.to_csv(path)
    back = FixedDesign.from_csv(path)
    np.testing.assert_allclose(back.X, d.X, atol=0)


def test_design_diagnostics_pass_and_warn():
    diag = design_diagnostics(FixedDesign.design1(50))
    assert diag.passed and diag.min_eigenvalue > 0
    assert diag.max_abs_x == 2.0

    diag3 = design_diagnostics(FixedDesign.design3(50))
    assert diag3.passed and "diverges" in diag3.note

    degenerate = FixedDesign(np.column_stack([np.ones(10), np.ones(10)]))
    assert not design_diagnostics(degenerate).passed


# ---------------------------------------------------------------------------
# K functions and exponential-family structure
# ---------------------------------------------------------------------------

def test_k_functions_normal(normal_model_50):
    theta = normal_model_50.pack([1.0, 1.0], 2.0)
    x = normal_model_50.X[0]
    k1, k2 = k_functions(normal_model_50, 2.0, x, theta)  # eta = 2, y = 2
    assert k1 == 0.0
    assert k2 == pytest.approx(-1.0 / 4.0)
    k1b, _ = k_functions(normal_model_50, 3.0, x, theta)
    assert k1b == pytest.approx(0.5)


def test_k_functions_poisson(poisson_model_small):
    theta = np.array([0.5, 0.5])
    x = poisson_model_small.X[0]  # (1, 1)
    k1, k2 = k_functions(poisson_model_small, math.e, x, theta)
    assert k1 == pytest.approx(0.0, abs=1e-12)
    assert k2 is None


def test_exponential_family_identities(normal_model_50, poisson_model_small):
    # mu = b'(eta) and var = a(phi) b''(eta), checked by finite differences
    for fam, eta, phi in ((normal_model_50, 0.7, 2.0), (poisson_model_small, 0.4, 1.0)):
        h = 1e-5
        b1 = (fam.b_eta(eta + h) - fam.b_eta(eta - h)) / (2 * h)
        b2 = (fam.b_eta(eta + h) - 2 * fam.b_eta(eta) + fam.b_eta(eta - h)) / h ** 2
        assert fam.mean(eta) == pytest.approx(b1, rel=1e-6)
        if fam is normal_model_50:
            assert fam.a_phi(phi) * b2 == pytest.approx(phi, rel=1e-4)
        else:
            assert fam.a_phi(phi) * b2 == pytest.approx(math.exp(eta), rel=1e-4)
        assert fam.link_inv(fam.link(2.5)) == pytest.approx(2.5)


def test_score_matches_numeric_gradient(normal_model_50, poisson_model_small):
    h = 1e-6
    cases = [
        (normal_model_50, normal_model_50.pack([0.8, 1.2], 1.5), 2.3),
        (poisson_model_small, np.array([0.5, 0.3]), 3.0),
    ]
    for fam, theta, y in cases:
        for i in (0, fam.n - 1):
            numeric = np.empty(fam.p)
            for j in range(fam.p):
                tp = theta.copy()
                tp[j] += h
                tm = theta.copy()
                tm[j] -= h
                numeric[j] = (fam.log_density(i, y, tp)
                              - fam.log_density(i, y, tm)) / (2 * h)
            np.testing.assert_allclose(fam.score(i, y, theta), numeric, atol=1e-6)


# ---------------------------------------------------------------------------
# gamma moments
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("tau", [0.0, 0.3, 1.0])
def test_normal_gamma_closed_vs_brute_force(tau):
    phi = 1.7
    g = normal_gamma_closed(phi, tau)
    assert g.g1 == pytest.approx(brute_normal_gamma(phi, tau, 1), abs=1e-12)
    assert g.g2 == pytest.approx(brute_normal_gamma(phi, tau, 2), abs=1e-12)
    assert g.g11 == pytest.approx(brute_normal_gamma(phi, tau, 1, 1), abs=1e-12)
    assert g.g12 == pytest.approx(brute_normal_gamma(phi, tau, 1, 2), abs=1e-12)
    assert g.g22 == pytest.approx(brute_normal_gamma(phi, tau, 2, 2), abs=1e-12)


def test_normal_gamma_numeric_engine_matches_closed(normal_model_50):
    theta = normal_model_50.pack([1.0, 1.0], 1.3)
    for tau in (0.0, 0.5):
        num = gamma_integrals(normal_model_50, normal_model_50.X[0], theta, tau)
        closed = normal_gamma_closed(1.3, tau)
        assert num.g11 == pytest.approx(closed.g11, abs=1e-10)
        assert num.g22 == pytest.approx(closed.g22, abs=1e-10)
        assert num.g2 == pytest.approx(closed.g2, abs=1e-10)
        assert abs(num.g1) < 1e-12 and abs(num.g12) < 1e-12


def test_normal_g11_closed_form_value():
    # (1/phi) (2 pi phi)^{-tau/2} (1+tau)^{-3/2}
    phi, tau = 2.2, 0.4
    expected = (2 * math.pi * phi) ** (-tau / 2) * (1 + tau) ** -1.5 / phi
    assert normal_gamma_closed(phi, tau).g11 == pytest.approx(expected, rel=1e-14)


def test_gamma1_vanishes_at_tau_zero(poisson_model_small):
    theta = np.array([0.5, 0.3])
    g = gamma_integrals(poisson_model_small, poisson_model_small.X[0], theta, 0.0)
    assert g.g1 == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("lam,tau", [(1.0, 1.0), (3.7, 0.3), (40.0, 0.5)])
def test_poisson_gamma_vs_brute_force(lam, tau):
    m0, m1, m2 = _poisson_power_moments(lam, 1.0 + tau)
    assert m1 == pytest.approx(brute_poisson_gamma(lam, tau, 1), abs=1e-10)
    assert m2 == pytest.approx(brute_poisson_gamma(lam, tau, 2), abs=1e-10)
    assert m0 == pytest.approx(brute_poisson_gamma(lam, tau, 0), abs=1e-10)


def test_poisson_large_mean_branch_continuity():
    # the summation and quadrature branches must agree where they meet
    for power in (1.0, 1.5, 2.0):
        lo = _poisson_power_moments(9.9e3, power)
        hi = _poisson_power_moments(9.9e3 + 1.0, power)  # still summed
        assert np.isfinite(lo).all() and np.isfinite(hi).all()
        lam = 2.0e4  # quadrature branch
        quad = _poisson_power_moments(lam, power)
        brute = [brute_poisson_gamma(lam, power - 1.0, m) for m in range(3)]
        for q, b in zip(quad, brute):
            # the absolute floor reflects the brute-force oracle's own
            # truncation noise on the analytically-zero first moment
            assert q == pytest.approx(b, rel=1e-8, abs=1e-9)


def test_poisson_huge_mean_does_not_overflow():
    lam = math.exp(50.0)
    m0, m1, m2 = _poisson_power_moments(lam, 1.5)
    assert np.isfinite([m0, m1, m2]).all() and m0 > 0 and m2 > 0


# ---------------------------------------------------------------------------
# sandwich assembly and closed forms
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("tau", TAU_GRID)
def test_normal_sigma_closed_forms(tau, normal_model_50):
    phi = 1.0
    theta = normal_model_50.pack([1.0, 1.0], phi)
    cov = glm_sandwich(normal_model_50, theta, tau)
    cx_inv = np.linalg.inv(normal_model_50.design.cx())
    np.testing.assert_allclose(cov.sigma[:2, :2],
                               normal_beta_variance(phi, tau) * cx_inv,
                               atol=1e-8)
    assert cov.sigma[2, 2] == pytest.approx(normal_phi_variance(phi, tau), abs=1e-8)
    np.testing.assert_allclose(
        cov.sigma, normal_sigma_closed(normal_model_50.design.cx(), phi, tau),
        atol=1e-8)


def test_phi_variance_classical_limit():
    assert normal_phi_variance(1.0, 0.0) == pytest.approx(2.0)
    assert normal_phi_variance(3.0, 0.0) == pytest.approx(18.0)


def test_glm_sandwich_matches_definition_level_poisson(poisson_model_small):
    theta = np.array([0.5, 0.3])
    for tau in (0.0, 0.4):
        block = glm_sandwich(poisson_model_small, theta, tau)
        direct = sandwich_cov(poisson_model_small, theta, tau, method="integration")
        np.testing.assert_allclose(block.psi, direct.psi, rtol=1e-10)
        np.testing.assert_allclose(block.omega, direct.omega, rtol=1e-10, atol=1e-14)


def test_glm_sandwich_matches_definition_level_design1_n50(poisson_model_50):
    theta = np.array([1.0, 0.0])
    block = glm_sandwich(poisson_model_50, theta, 0.3)
    direct = sandwich_cov(poisson_model_50, theta, 0.3, method="integration")
    np.testing.assert_allclose(block.psi, direct.psi, rtol=1e-10)
    np.testing.assert_allclose(block.omega, direct.omega, rtol=1e-10, atol=1e-14)


def test_glm_sandwich_matches_family_path_normal(normal_model_50):
    theta = normal_model_50.pack([0.7, -0.4], 2.0)
    for tau in (0.0, 0.6):
        block = glm_sandwich(normal_model_50, theta, tau)
        fast = sandwich_cov(normal_model_50, theta, tau)
        np.testing.assert_allclose(block.psi, fast.psi, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(block.omega, fast.omega, rtol=1e-9, atol=1e-12)


def test_fisher_blocks_at_tau_zero(poisson_model_small):
    theta = np.array([0.5, 0.3])
    cov = glm_sandwich(poisson_model_small, theta, 0.0)
    lam = np.exp(poisson_model_small.X @ theta)
    fisher = (poisson_model_small.X.T * lam) @ poisson_model_small.X / poisson_model_small.n
    np.testing.assert_allclose(cov.psi, fisher, rtol=1e-10)
    np.testing.assert_allclose(cov.omega, fisher, rtol=1e-10)


def test_poisson_mdpde_tau0_equals_reference_mle(poisson_model_50):
    rng = np.random.Generator(np.random.Philox(key=2024))
    theta_true = np.array([1.0, 0.5])
    data = poisson_model_50.sample_dataset(theta_true, rng)
    fit = fit_mdpde(poisson_model_50, data, 0.0)
    # reference: straightforward IRLS written out here
    beta = np.zeros(2)
    X = poisson_model_50.X
    for _ in range(200):
        lam = np.exp(X @ beta)
        step = np.linalg.solve((X.T * lam) @ X, X.T @ (data - lam))
        beta = beta + step
        if np.max(np.abs(step)) < 1e-12:
            break
    np.testing.assert_allclose(fit.theta, beta, atol=1e-8)


# ---------------------------------------------------------------------------
# closed-form statistics and deltas
# ---------------------------------------------------------------------------

def test_normal_wald_statistic_zero_and_classical(normal_model_50, normal_data_50):
    cx = normal_model_50.design.cx()
    assert normal_wald_statistic([1, 1], 1.0, [1, 1], cx, 50, 0.5) == 0.0
    data, _ = normal_data_50
    fit = fit_mdpde(normal_model_50, data, 0.0)
    beta_hat, phi_hat = fit.theta[:2], fit.theta[2]
    w = normal_wald_statistic(beta_hat, phi_hat, [1.0, 1.0], cx, 50, 0.0)
    diff = beta_hat - np.array([1.0, 1.0])
    classical = 50.0 * diff @ cx @ diff / phi_hat
    assert w == pytest.approx(classical, rel=1e-12)


def test_normal_wald_agrees_with_generic_composite(normal_model_50):
    rng = np.random.Generator(np.random.Philox(key=31))
    theta_true = normal_model_50.pack([1.0, 1.0], 1.0)
    data = normal_model_50.sample_dataset(theta_true, rng)
    tau = 0.5
    fit = fit_mdpde(normal_model_50, data, tau)
    beta_hat, phi_hat = fit.theta[:2], fit.theta[2]
    cx = normal_model_50.design.cx()
    closed = normal_wald_statistic(beta_hat, phi_hat, [1.0, 1.0], cx, 50, tau)
    # generic path with the closed-form block-diagonal Sigma at theta_hat
    sigma = normal_sigma_closed(cx, phi_hat, tau)
    hyp = LinearHypothesis(np.eye(2), np.array([1.0, 1.0]))
    report = wald_composite(fit.theta, hyp, sigma, 50, tau=tau)
    assert report.statistic == pytest.approx(closed, rel=1e-10)


def test_contiguous_delta_unit_factor_at_tau_zero(normal_model_50):
    d = np.array([1.0, 2.0])
    cx = normal_model_50.design.cx()
    dx = float(d @ cx @ d)
    assert normal_contiguous_delta(dx, 1.0, 0.0) == pytest.approx(dx, rel=1e-14)


@pytest.mark.parametrize("tau", [0.0, 0.3, 1.0])
def test_contiguous_delta_paths_agree_normal(tau, normal_model_50):
    theta0 = normal_model_50.pack([1.0, 1.0], 1.0)
    d = np.array([0.3, -0.2])
    L = np.eye(2)
    delta_generic = glm_contiguous_delta(normal_model_50, theta0, tau, L, d)
    dx = float(d @ normal_model_50.design.cx() @ d)
    assert delta_generic == pytest.approx(normal_contiguous_delta(dx, 1.0, tau),
                                          rel=1e-6)


def test_contiguous_delta_poisson_single_coefficient(poisson_model_50):
    beta0 = np.array([1.0, 0.0])
    L = np.array([[0.0, 1.0]])
    d = np.array([0.0, 2.0])
    delta = glm_contiguous_delta(poisson_model_50, beta0, 0.0, L, d)
    sigma = glm_sandwich(poisson_model_50, beta0, 0.0).sigma
    assert delta == pytest.approx(4.0 / sigma[1, 1], rel=1e-12)


# ---------------------------------------------------------------------------
# S vector
# ---------------------------------------------------------------------------

def test_s_vector_centered_under_model(normal_model_50, poisson_model_small):
    # E_f[S] = 0: each block is an f^tau-weighted score centered by its gamma
    theta_n = normal_model_50.pack([1.0, 1.0], 1.2)
    tau = 0.4

    def integrand(t, j):
        return s_vector(normal_model_50, 0, t, theta_n, tau)[j] * \
            normal_model_50.density(0, t, theta_n)

    for j in (0, 2):
        val, _ = integrate.quad(integrand, 2 - 40, 2 + 40, args=(j,),
                                limit=300, epsabs=1e-10)
        assert abs(val) < 1e-8

    theta_p = np.array([0.5, 0.3])
    for j in (0, 1):
        total = sum(s_vector(poisson_model_small, 0, float(y), theta_p, tau)[j]
                    * poisson_model_small.density(0, float(y), theta_p)
                    for y in range(200))
        assert abs(total) < 1e-8


def test_s_vector_equals_estimator_if_numerator(normal_model_50):
    # the S vector is exactly the centered term driving the influence function
    theta = normal_model_50.pack([1.0, 1.0], 1.0)
    tau = 0.3
    t = 4.2
    i0 = 7
    psi = sandwich_cov(normal_model_50, theta, tau).psi
    iv = if_mdpde(normal_model_50, theta, tau, ContaminationSpec.single(i0, t))
    s = s_vector(normal_model_50, i0, t, theta, tau)
    np.testing.assert_allclose(psi @ iv * normal_model_50.n, s, atol=1e-8)


def test_s_vector_redescends_for_normal_and_stays_bounded_for_poisson(
        normal_model_50, poisson_model_small):
    # the f^tau-weighted part dies off, leaving only the constant centering
    # term -(gamma_1 x, gamma_2); its regression block is zero for the normal
    theta_n = normal_model_50.pack([1.0, 1.0], 1.0)
    g = normal_gamma_closed(1.0, 0.5)
    far = s_vector(normal_model_50, 0, 2.0 + 50.0, theta_n, 0.5)
    np.testing.assert_allclose(far[:2], 0.0, atol=1e-12)
    assert far[2] == pytest.approx(-g.g2, abs=1e-10)
    near = np.linalg.norm(s_vector(normal_model_50, 0, 3.0, theta_n, 0.5)[:2])
    assert near > 1e-3

    theta_p = np.array([0.5, 0.3])
    norms = [np.linalg.norm(s_vector(poisson_model_small, 0, float(y), theta_p, 0.5))
             for y in range(0, 500, 7)]
    assert np.isfinite(norms).all()
    # large counts are fully damped down to the centering constant
    g1 = gamma_integrals(poisson_model_small, poisson_model_small.X[0], theta_p, 0.5).g1
    limit = np.linalg.norm(g1 * poisson_model_small.X[0])
    assert norms[-1] == pytest.approx(limit, rel=1e-8)


def test_poisson_mean_domain_guard(poisson_model_small):
    with pytest.raises(DomainError):
        _poisson_power_moments(-1.0, 1.5)
