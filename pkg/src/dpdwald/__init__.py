"""Robust Wald-type tests for independent, non-identically distributed data
based on minimum density power divergence estimation."""

__version__ = "0.1.0"

from .chisq import (chi2_cdf, chi2_quantile, chi2_sf, kstar,
                    noncentral_chi2_cdf, noncentral_chi2_sf)
from .errors import (ConvergenceError, DegenerateAlternativeError,
                     DesignDeficiencyError, DomainError, DpdError,
                     NumericalError)
from .families import ModelFamily, SUPPORT_CONTINUOUS, SUPPORT_COUNTS
from .glm import (DesignDiagnostics, FixedDesign, GammaSet, GlmFamily,
                  NormalLinearModel, PoissonLogModel, design_diagnostics,
                  gamma_integrals, glm_contiguous_delta, glm_sandwich,
                  k_functions, normal_beta_variance, normal_contiguous_delta,
                  normal_gamma_closed, normal_phi_variance,
                  normal_sigma_closed, normal_wald_statistic, s_vector)
from .integrals import IntegralEngine
from .mc import McConfig, McReport, McRow, run_mc
from .mdpde import (FitResult, SandwichCov, dpd_objective,
                    estimating_equation, fit_mdpde, sandwich_cov, xi_vector)
from .robustness import (ContaminationSpec, IfProfile, default_grid, if1_wald,
                         if2_profile, if2_wald_composite, if2_wald_simple,
                         if_mdpde, lif, pif, pif_profile)
from .wald import (CompositeHypothesis, LinearHypothesis, TestReport,
                   contaminated_contiguous_power, contiguous_power_composite,
                   contiguous_power_simple, power_fixed_alternative,
                   sample_size_for_power, wald_composite, wald_simple)

__all__ = [name for name in dir() if not name.startswith("_")]
