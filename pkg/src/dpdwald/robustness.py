"""Influence-function diagnostics for the estimator and the test statistics.

At the null model the first-order influence function of either Wald-type
statistic vanishes identically, so the second-order influence function is
the leading contamination response:

    IF2 = 2 IF' Sigma^{-1} IF            (simple null)
    IF2 = 2 IF' H (H' Sigma H)^{-1} H' IF  (composite null)

with IF the estimator's influence function Psi^{-1} (1/n) sum D_i, where
D_i(t) = f_i^tau(t) u_i(t) - int u_i f_i^{1+tau}.  The power influence
function multiplies a drift projection of IF by the ``kstar`` series factor;
the level influence function is identically zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .chisq import kstar
from .errors import DesignDeficiencyError
from .families import ModelFamily, as_param_vector
from .integrals import SUPPORT_COUNTS
from .mdpde import sandwich_cov
from .wald import CompositeHypothesis, LinearHypothesis

__all__ = [
    "ContaminationSpec",
    "IfProfile",
    "if_mdpde",
    "if1_wald",
    "if2_wald_simple",
    "if2_wald_composite",
    "pif",
    "lif",
    "default_grid",
    "if2_profile",
    "pif_profile",
]


@dataclass(frozen=True)
class ContaminationSpec:
    """Point contamination in one fixed direction or in all n directions."""

    mode: str  # "single-direction" | "all-directions"
    points: np.ndarray
    i0: Optional[int] = None

    @classmethod
    def single(cls, i0: int, t: float) -> "ContaminationSpec":
        return cls(mode="single-direction", points=np.atleast_1d(float(t)), i0=int(i0))

    @classmethod
    def all(cls, points) -> "ContaminationSpec":
        return cls(mode="all-directions",
                   points=np.atleast_1d(np.asarray(points, dtype=float)))

    def resolve_points(self, n: int) -> np.ndarray:
        if self.mode == "single-direction":
            if self.i0 is None or not 0 <= self.i0 < n:
                raise ValueError(f"contamination direction {self.i0} outside 0..{n - 1}")
            return self.points
        pts = self.points
        if pts.size == 1:
            return np.full(n, pts[0])
        if pts.size != n:
            raise ValueError(f"need {n} contamination points, got {pts.size}")
        return pts


@dataclass(frozen=True)
class IfProfile:
    """Influence values over a grid of contamination points, one tau."""

    grid: np.ndarray
    values: np.ndarray
    tau: float
    label: str = ""

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))


def _d_vector(model: ModelFamily, i: int, t: float, theta, tau: float) -> np.ndarray:
    logf = model.log_density(i, t, theta)
    weight = 1.0 if tau == 0.0 else float(np.exp(tau * logf))
    return weight * model.score(i, t, theta) - model.xi_vector(i, theta, tau)


def if_mdpde(model: ModelFamily, theta0, tau: float, spec: ContaminationSpec,
             psi_inv: Optional[np.ndarray] = None) -> np.ndarray:
    """Influence function of the estimator at the model null.

    Single direction: Psi^{-1} (1/n) D_{i0}(t); all directions:
    Psi^{-1} (1/n) sum_i D_i(t_i).  ``psi_inv`` short-circuits the bread
    computation when profiling over many points.
    """
    theta0 = as_param_vector(theta0, model.p)
    if psi_inv is None:
        psi_inv = np.linalg.inv(sandwich_cov(model, theta0, tau).psi)
    pts = spec.resolve_points(model.n)
    if spec.mode == "single-direction":
        total = _d_vector(model, spec.i0, float(pts[0]), theta0, tau)
    else:
        total = np.zeros(model.p)
        for i in range(model.n):
            total += _d_vector(model, i, float(pts[i]), theta0, tau)
    return psi_inv @ (total / model.n)


def if1_wald(model: ModelFamily, theta0, tau: float, spec: ContaminationSpec,
             hyp=None) -> float:
    """First-order influence function of either test statistic at the null.

    Identically zero: the statistic is a quadratic form vanishing to second
    order at the null functional value.  Exposed so that the contract is
    directly testable.
    """
    return 0.0


def if2_wald_simple(model: ModelFamily, theta0, tau: float,
                    spec: ContaminationSpec, cov=None) -> float:
    """Second-order influence function of the simple-null statistic."""
    theta0 = as_param_vector(theta0, model.p)
    cov = cov or sandwich_cov(model, theta0, tau)
    iv = if_mdpde(model, theta0, tau, spec, psi_inv=np.linalg.inv(cov.psi))
    return 2.0 * float(iv @ np.linalg.solve(cov.sigma, iv))


def _projection(H: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    middle = H.T @ sigma @ H
    try:
        inv = np.linalg.inv(middle)
    except np.linalg.LinAlgError as exc:
        raise DesignDeficiencyError("H' Sigma H is singular") from exc
    return H @ inv @ H.T


def _resolve_hyp(hyp, p: int) -> CompositeHypothesis:
    if isinstance(hyp, LinearHypothesis):
        return hyp.to_composite(p)
    return hyp


def if2_wald_composite(model: ModelFamily, theta0, tau: float, hyp,
                       spec: ContaminationSpec, cov=None) -> float:
    """Second-order influence function of the composite-null statistic."""
    theta0 = as_param_vector(theta0, model.p)
    cov = cov or sandwich_cov(model, theta0, tau)
    hyp = _resolve_hyp(hyp, model.p)
    H = hyp.jac(theta0)
    proj = _projection(H, cov.sigma)
    iv = if_mdpde(model, theta0, tau, spec, psi_inv=np.linalg.inv(cov.psi))
    return 2.0 * float(iv @ proj @ iv)


def pif(model: ModelFamily, theta0, tau: float, d, spec: ContaminationSpec,
        alpha: float = 0.05, hyp=None, cov=None) -> float:
    """Power influence function under root-n local alternatives in
    direction ``d`` with root-n shrinking contamination at ``spec``."""
    theta0 = as_param_vector(theta0, model.p)
    d = np.atleast_1d(np.asarray(d, dtype=float))
    cov = cov or sandwich_cov(model, theta0, tau)
    iv = if_mdpde(model, theta0, tau, spec, psi_inv=np.linalg.inv(cov.psi))
    if hyp is None:
        if d.size != model.p:
            raise ValueError(f"direction has length {d.size}, expected {model.p}")
        sig_inv_d = np.linalg.solve(cov.sigma, d)
        delta0 = float(d @ sig_inv_d)
        return kstar(delta0, model.p, alpha) * float(sig_inv_d @ iv)
    hyp = _resolve_hyp(hyp, model.p)
    H = hyp.jac(theta0)
    proj = _projection(H, cov.sigma)
    r = H.shape[1]
    delta0 = float(d @ proj @ d)
    return kstar(delta0, r, alpha) * float(d @ proj @ iv)


def lif(model: ModelFamily, theta0, tau: float, spec: ContaminationSpec,
        alpha: float = 0.05, hyp=None) -> float:
    """Level influence function; exactly zero under root-n shrinking
    contamination, for simple and composite nulls alike."""
    return 0.0


def default_grid(model: ModelFamily, theta0, n_points: int = 401) -> np.ndarray:
    """Contamination grid: symmetric about the average fitted mean with
    half-width max(20, 10 sd) for continuous support; the count grid runs
    from 0 to max(200, mean + 10 sd)."""
    theta0 = as_param_vector(theta0, model.p)
    centers = np.array([_fitted_mean(model, i, theta0) for i in range(model.n)])
    center = float(np.mean(centers))
    sd = float(np.sqrt(max(_fitted_variance(model, theta0), 0.0)))
    if model.support == SUPPORT_COUNTS:
        hi = int(max(200, np.ceil(center + 10.0 * sd)))
        return np.arange(0, hi + 1, dtype=float)
    half = max(20.0, 10.0 * sd)
    return np.linspace(center - half, center + half, n_points)


def _fitted_mean(model, i, theta):
    from .glm import GlmFamily

    if isinstance(model, GlmFamily):
        return float(model.mean(float(model.X[i] @ model.beta(theta))))
    lo, hi = model.integration_window(i, theta)
    return 0.5 * (lo + hi)


def _fitted_variance(model, theta):
    from .glm import NormalLinearModel, PoissonLogModel

    if isinstance(model, NormalLinearModel):
        return model.dispersion(theta)
    if isinstance(model, PoissonLogModel):
        return float(np.max(np.exp(model.linear_predictor(theta))))
    return 1.0


def _spec_for(model, direction, t):
    if direction == "all":
        return ContaminationSpec.all(t)
    return ContaminationSpec.single(int(direction), t)


def if2_profile(model: ModelFamily, theta0, tau: float, direction="all",
                hyp=None, grid=None) -> IfProfile:
    """Second-order IF of the test statistic along a contamination grid."""
    theta0 = as_param_vector(theta0, model.p)
    grid = default_grid(model, theta0) if grid is None else np.asarray(grid, dtype=float)
    cov = sandwich_cov(model, theta0, tau)
    values = np.empty(grid.size)
    for idx, t in enumerate(grid):
        spec = _spec_for(model, direction, float(t))
        if hyp is None:
            values[idx] = if2_wald_simple(model, theta0, tau, spec, cov=cov)
        else:
            values[idx] = if2_wald_composite(model, theta0, tau, hyp, spec, cov=cov)
    label = "if2-simple" if hyp is None else "if2-composite"
    return IfProfile(grid=grid, values=values, tau=tau, label=label)


def pif_profile(model: ModelFamily, theta0, tau: float, d, direction="all",
                alpha: float = 0.05, hyp=None, grid=None) -> IfProfile:
    """Power influence function along a contamination grid."""
    theta0 = as_param_vector(theta0, model.p)
    grid = default_grid(model, theta0) if grid is None else np.asarray(grid, dtype=float)
    cov = sandwich_cov(model, theta0, tau)
    values = np.empty(grid.size)
    for idx, t in enumerate(grid):
        spec = _spec_for(model, direction, float(t))
        values[idx] = pif(model, theta0, tau, d, spec, alpha=alpha, hyp=hyp, cov=cov)
    return IfProfile(grid=grid, values=values, tau=tau, label="pif")
