"""Semi-supervised triply robust transfer learning for high-dimensional GLMs.

Public entry points are re-exported here; see the submodules for details.
"""

from importlib.metadata import PackageNotFoundError, version as _version

from .density_ratio import BasisSpec, DensityRatioFit, fit_dr_lasso, fit_dr_ridge_threshold
from .estimators import (
    METHODS,
    ImputationEstimate,
    OutcomeEstimate,
    TransferDecision,
    Tuning,
    estimate_rho,
    fit_beta_cs,
    fit_beta_ss,
    fit_beta_sup,
    fit_beta_transglm,
    fit_delta,
    fit_methods,
    fit_theta_meta,
    fit_theta_pooled,
    fit_theta_strifle,
    fit_theta_target_only,
)
from .glm import LinkSpec, ObservationBlock, StudyData, quasi_loglik, standardize
from .penalty import PenaltySpec, assumption2_check, prox_step
from .solver import CVConfig, FitConfig, fit_cv, fit_penalized
from .simulation import SimConfig, compute_oracle_beta0, run_replications

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"
