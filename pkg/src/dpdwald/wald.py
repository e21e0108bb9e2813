"""Wald-type test statistics built on the minimum-DPD estimator, with
chi-square calibration, power approximations against fixed and root-n local
alternatives, and the induced sample-size rule.

Simple null:     W = n (theta_hat - theta0)' Sigma(theta0)^{-1} (theta_hat - theta0),
Composite null:  W = n h(theta_hat)' [H' Sigma(theta_hat) H]^{-1} h(theta_hat),

rejected above the upper-alpha central chi-square quantile with p (simple)
or r (composite) degrees of freedom.  The evaluation points of Sigma are
fixed as written; there is deliberately no option to swap them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtr, ndtri

from .chisq import chi2_quantile, chi2_sf, noncentral_chi2_sf
from .errors import DegenerateAlternativeError, DesignDeficiencyError
from .mdpde import SandwichCov

__all__ = [
    "LinearHypothesis",
    "CompositeHypothesis",
    "TestReport",
    "wald_simple",
    "wald_composite",
    "power_fixed_alternative",
    "sample_size_for_power",
    "contiguous_power_simple",
    "contiguous_power_composite",
    "contaminated_contiguous_power",
]

_RANK_TOL = 1e-10


def _as_matrix(sigma) -> np.ndarray:
    if isinstance(sigma, SandwichCov):
        return sigma.sigma
    return np.asarray(sigma, dtype=float)


def _solve_psd(mat, vec_or_mat, what: str):
    try:
        return np.linalg.solve(mat, vec_or_mat)
    except np.linalg.LinAlgError as exc:
        raise DesignDeficiencyError(f"{what} is singular") from exc


@dataclass(frozen=True)
class LinearHypothesis:
    """L beta = l0 with L an r x k matrix of full row rank."""

    L: np.ndarray
    l0: np.ndarray

    def __post_init__(self):
        L = np.atleast_2d(np.asarray(self.L, dtype=float))
        l0 = np.atleast_1d(np.asarray(self.l0, dtype=float))
        if L.shape[0] != l0.size:
            raise ValueError("L and l0 have incompatible shapes")
        sv = np.linalg.svd(L, compute_uv=False)
        if L.shape[0] > L.shape[1] or sv[-1] <= _RANK_TOL * sv[0]:
            raise ValueError(
                f"restriction matrix must have full row rank; singular values {sv}"
            )
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "l0", l0)

    @property
    def r(self) -> int:
        return self.L.shape[0]

    @property
    def k(self) -> int:
        return self.L.shape[1]

    def to_composite(self, p: Optional[int] = None) -> "CompositeHypothesis":
        """Equivalent restriction function h(theta) = L theta[:k] - l0.

        ``p`` pads the Jacobian with zero rows for trailing coordinates
        (e.g. an unknown dispersion) that the restriction does not touch.
        """
        p = self.k if p is None else int(p)
        if p < self.k:
            raise ValueError("p must be at least the number of columns of L")
        pad = p - self.k
        Hmat = np.vstack([self.L.T, np.zeros((pad, self.r))])

        def h(theta):
            theta = np.asarray(theta, dtype=float)
            return self.L @ theta[: self.k] - self.l0

        return CompositeHypothesis(h=h, jacobian=lambda theta: Hmat, r=self.r)

    @classmethod
    def coefficient(cls, index: int, k: int, value: float = 0.0) -> "LinearHypothesis":
        """Single-coefficient restriction beta[index] = value (0-based index)."""
        L = np.zeros((1, k))
        L[0, index] = 1.0
        return cls(L, np.array([value]))


@dataclass(frozen=True)
class CompositeHypothesis:
    """r smooth non-redundant restrictions h(theta) = 0.

    ``jacobian(theta)`` returns the p x r matrix of partial derivatives
    (gradient columns).  When omitted it is filled in by central finite
    differences of ``h``.
    """

    h: Callable[[np.ndarray], np.ndarray]
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    r: Optional[int] = None

    def value(self, theta) -> np.ndarray:
        out = np.atleast_1d(np.asarray(self.h(np.asarray(theta, dtype=float)),
                                       dtype=float))
        if self.r is not None and out.size != self.r:
            raise ValueError(f"h returned length {out.size}, expected {self.r}")
        return out

    def jac(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if self.jacobian is not None:
            H = np.atleast_2d(np.asarray(self.jacobian(theta), dtype=float))
        else:
            H = self._fd_jacobian(theta)
        sv = np.linalg.svd(H, compute_uv=False)
        if sv[-1] <= _RANK_TOL * sv[0]:
            raise DesignDeficiencyError(
                "restriction Jacobian is rank deficient at the evaluation point"
            )
        return H

    def _fd_jacobian(self, theta, h=1e-6) -> np.ndarray:
        base = self.value(theta)
        H = np.empty((theta.size, base.size))
        for j in range(theta.size):
            step = h * max(1.0, abs(theta[j]))
            tp = theta.copy()
            tp[j] += step
            tm = theta.copy()
            tm[j] -= step
            H[j] = (self.value(tp) - self.value(tm)) / (2.0 * step)
        return H


@dataclass(frozen=True)
class TestReport:
    statistic: float
    df: int
    p_value: float
    reject: bool
    alpha: float
    tau: float
    sigma_used: Optional[SandwichCov] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "df": self.df,
            "p_value": self.p_value,
            "reject": self.reject,
            "alpha": self.alpha,
            "tau": self.tau,
        }


def _report(statistic, df, alpha, tau, sigma_used) -> TestReport:
    statistic = float(statistic)
    if statistic < 0.0:
        # quadratic form in an inverse covariance; tiny negatives are roundoff
        if statistic < -1e-10:
            raise DesignDeficiencyError(
                f"negative quadratic form {statistic}: covariance not PSD"
            )
        statistic = 0.0
    p_value = chi2_sf(statistic, df)
    return TestReport(statistic=statistic, df=df, p_value=p_value,
                      reject=bool(statistic > chi2_quantile(df, alpha)),
                      alpha=alpha, tau=tau, sigma_used=sigma_used)


def wald_simple(theta_hat, theta0, sigma, n: int, alpha: float = 0.05,
                tau: float | None = None) -> TestReport:
    """Test H0: theta = theta0; ``sigma`` is Sigma_tau evaluated at theta0."""
    theta_hat = np.asarray(theta_hat, dtype=float)
    theta0 = np.asarray(theta0, dtype=float)
    if theta_hat.shape != theta0.shape:
        raise ValueError("theta_hat and theta0 have different shapes")
    mat = _as_matrix(sigma)
    diff = theta_hat - theta0
    stat = n * float(diff @ _solve_psd(mat, diff, "Sigma"))
    tau = sigma.tau if tau is None and isinstance(sigma, SandwichCov) else (tau or 0.0)
    return _report(stat, theta_hat.size, alpha, tau,
                   sigma if isinstance(sigma, SandwichCov) else None)


def wald_composite(theta_hat, hyp, sigma, n: int, alpha: float = 0.05,
                   tau: float | None = None) -> TestReport:
    """Test h(theta) = 0; ``sigma`` is Sigma_tau evaluated at theta_hat."""
    theta_hat = np.asarray(theta_hat, dtype=float)
    if isinstance(hyp, LinearHypothesis):
        hyp = hyp.to_composite(theta_hat.size)
    mat = _as_matrix(sigma)
    hval = hyp.value(theta_hat)
    H = hyp.jac(theta_hat)
    middle = H.T @ mat @ H
    stat = n * float(hval @ _solve_psd(middle, hval, "H' Sigma H"))
    tau = sigma.tau if tau is None and isinstance(sigma, SandwichCov) else (tau or 0.0)
    return _report(stat, hval.size, alpha, tau,
                   sigma if isinstance(sigma, SandwichCov) else None)


def _drift_and_sd(theta_star, theta0, hyp, sigma0, sigma_star):
    """(s(theta*), sigma_W(theta*), df) for the normal power approximation."""
    sigma0 = None if sigma0 is None else _as_matrix(sigma0)
    sigma_star = _as_matrix(sigma_star)
    theta_star = np.asarray(theta_star, dtype=float)
    if hyp is None:
        theta0 = np.asarray(theta0, dtype=float)
        diff = theta_star - theta0
        inv_diff = _solve_psd(sigma0, diff, "Sigma(theta0)")
        s = float(diff @ inv_diff)
        var = 4.0 * float(inv_diff @ sigma_star @ inv_diff)
        df = theta_star.size
    else:
        if isinstance(hyp, LinearHypothesis):
            hyp = hyp.to_composite(theta_star.size)
        hval = hyp.value(theta_star)
        H = hyp.jac(theta_star)
        middle = H.T @ sigma_star @ H
        s = float(hval @ _solve_psd(middle, hval, "H' Sigma H"))
        var = 4.0 * s
        df = hval.size
    return s, var, df


def power_fixed_alternative(theta_star, theta0=None, sigma0=None, sigma_star=None,
                            n: int = None, alpha: float = 0.05,
                            hyp=None) -> float:
    """Normal approximation to the power at a fixed alternative theta*.

    Simple case (``hyp`` None): drift s = (t*-t0)' Sigma0^{-1} (t*-t0) with
    standard deviation from the delta method mixing Sigma0 and Sigma(theta*).
    Composite case: s = h' (H' Sigma* H)^{-1} h with variance 4 s, both at
    theta*.  The power is 1 - Phi(sqrt(n) (c/n - s)/sd) for critical value c.
    """
    if n is None or n <= 0:
        raise ValueError("n must be a positive integer")
    s, var, df = _drift_and_sd(theta_star, theta0, hyp, sigma0, sigma_star)
    if s <= 0.0:
        raise DegenerateAlternativeError("alternative coincides with the null")
    if var <= 0.0:
        raise DegenerateAlternativeError("degenerate alternative: sigma_W = 0")
    crit = chi2_quantile(df, alpha)
    z = math.sqrt(n / var) * (crit / n - s)
    return float(1.0 - ndtr(z))


def sample_size_for_power(theta_star, theta0=None, sigma0=None, sigma_star=None,
                          alpha: float = 0.05, target_power: float = 0.9,
                          hyp=None) -> int:
    """Smallest sample size whose approximate power reaches ``target_power``.

    Evaluates n = [ (A + B + sqrt(A (A + 2B))) / (2 s^2) ] + 1 with
    A = sigma_W^2 (Phi^{-1}(1 - target))^2 and B = 2 s chi2_{df,alpha}.
    """
    if not 0.0 < target_power < 1.0:
        raise ValueError("target power must be in (0, 1)")
    s, var, df = _drift_and_sd(theta_star, theta0, hyp, sigma0, sigma_star)
    if s <= 0.0:
        raise DegenerateAlternativeError("alternative coincides with the null")
    A = var * float(ndtri(1.0 - target_power)) ** 2
    B = 2.0 * s * chi2_quantile(df, alpha)
    n = int(np.floor((A + B + np.sqrt(A * (A + 2.0 * B))) / (2.0 * s * s))) + 1
    return max(n, 1)


def contiguous_power_simple(d, sigma, alpha: float = 0.05) -> float:
    """Asymptotic power against theta0 + d/sqrt(n): noncentral chi-square tail
    with noncentrality d' Sigma^{-1} d."""
    d = np.atleast_1d(np.asarray(d, dtype=float))
    mat = _as_matrix(sigma)
    delta = float(d @ _solve_psd(mat, d, "Sigma"))
    df = d.size
    return noncentral_chi2_sf(chi2_quantile(df, alpha), df, max(delta, 0.0))


def contiguous_power_composite(d, hyp, sigma, alpha: float = 0.05,
                               theta0=None, d_star=None) -> float:
    """Asymptotic composite-test power under root-n local alternatives.

    Accepts the full-parameter direction ``d`` (noncentrality
    d' H (H' Sigma H)^{-1} H' d) or, alternatively, the restriction-space
    drift ``d_star`` = H' d directly.
    """
    mat = _as_matrix(sigma)
    if isinstance(hyp, LinearHypothesis):
        p = mat.shape[0]
        hyp = hyp.to_composite(p)
    theta_eval = np.zeros(mat.shape[0]) if theta0 is None else np.asarray(theta0, dtype=float)
    H = hyp.jac(theta_eval)
    middle = H.T @ mat @ H
    if d_star is None:
        d = np.atleast_1d(np.asarray(d, dtype=float))
        d_star = H.T @ d
    else:
        d_star = np.atleast_1d(np.asarray(d_star, dtype=float))
    delta = float(d_star @ _solve_psd(middle, d_star, "H' Sigma H"))
    df = d_star.size
    return noncentral_chi2_sf(chi2_quantile(df, alpha), df, max(delta, 0.0))


def contaminated_contiguous_power(d, epsilon: float, if_value, sigma,
                                  alpha: float = 0.05, hyp=None,
                                  theta0=None) -> float:
    """Asymptotic power under root-n local alternatives with a root-n
    shrinking contamination: the drift is shifted by epsilon times the
    estimator's influence-function value at the contamination points."""
    if epsilon < 0.0:
        raise ValueError("epsilon must be >= 0")
    d = np.atleast_1d(np.asarray(d, dtype=float))
    if_value = np.atleast_1d(np.asarray(if_value, dtype=float))
    shifted = d + epsilon * if_value
    if hyp is None:
        return contiguous_power_simple(shifted, sigma, alpha)
    return contiguous_power_composite(shifted, hyp, sigma, alpha, theta0=theta0)
