"""Heterogeneous treatment effect estimation with instruments.

The package reduces effect estimation under endogenous treatment to
orthogonal square-loss minimization: a preliminary weighted-regression
stage, a doubly robust pseudo-outcome stage, reweighted variants for weak
instruments, confidence intervals for parametric projections, synthetic
data generators with known effects, and a Monte Carlo / orthogonality
verification harness.
"""
__version__ = "0.1.0"

from .ate import EstimateWithCI, estimate_dmlateiv, estimate_dr_ate
from .crossfit import (
    NuisanceLearners,
    NuisanceSet,
    Residuals,
    compliance_delta,
    compute_residuals,
    fit_nuisances,
)
from .dataset import (
    CsvSchema,
    IvDataset,
    SplitPlan,
    load_csv,
    make_splits,
    quantile_normalize,
)
from .dgp import DgpSpec, GroundTruth, generate, oracle_for
from .dmliv import CateModel, dmliv_reduction, fit_dmliv, overlap_diagnostic
from .driv import (
    PseudoOutcome,
    binary_iv_pipeline,
    driv_pseudo_outcome,
    fit_driv,
    fit_driv_rw,
    fit_projected_driv_rw,
    fit_theta_pre,
)
from .estimators import DmlAteIv, IvCateEstimator
from .exceptions import IvCateError
from .harness import (
    CoverageReport,
    OrthogonalityReport,
    cate_mse,
    orthogonality_slope,
    run_coverage,
)
from .inference import LinearProjectionResult, ols_robust
from .learners import LearnerSpec, cross_validate, fit_classifier, fit_regressor

__all__ = [
    "__version__",
    "EstimateWithCI", "estimate_dmlateiv", "estimate_dr_ate",
    "NuisanceLearners", "NuisanceSet", "Residuals", "compliance_delta",
    "compute_residuals", "fit_nuisances",
    "CsvSchema", "IvDataset", "SplitPlan", "load_csv", "make_splits",
    "quantile_normalize",
    "DgpSpec", "GroundTruth", "generate", "oracle_for",
    "CateModel", "dmliv_reduction", "fit_dmliv", "overlap_diagnostic",
    "PseudoOutcome", "binary_iv_pipeline", "driv_pseudo_outcome",
    "fit_driv", "fit_driv_rw", "fit_projected_driv_rw", "fit_theta_pre",
    "DmlAteIv", "IvCateEstimator",
    "IvCateError",
    "CoverageReport", "OrthogonalityReport", "cate_mse",
    "orthogonality_slope", "run_coverage",
    "LinearProjectionResult", "ols_robust",
    "LearnerSpec", "cross_validate", "fit_classifier", "fit_regressor",
]
