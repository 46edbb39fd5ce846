"""Doubly robust effect estimation: pseudo-outcome regression and variants.

The doubly robust pseudo-outcome is

    y_dr = theta_pre(X) + (y_res - theta_pre(X) * t_res) * z_res / beta(X)

whose conditional mean equals the true effect function when the nuisances
are correct. ``fit_driv`` regresses it on X; ``fit_driv_rw`` minimizes the
beta^2-reweighted loss (no beta clipping needed); ``fit_projected_driv_rw``
uses the strongest instrument transform z_pi_res = hhat - phat with V^2
weights.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ate import EstimateWithCI, estimate_dr_ate, weighted_mean_ci
from .crossfit import (
    NuisanceLearners,
    NuisanceSet,
    Residuals,
    compute_residuals,
    fit_nuisances,
)
from .dataset import IvDataset, SplitPlan, make_splits
from .dmliv import CateModel, dmliv_reduction, fit_cate_space, fit_dmliv
from .exceptions import (
    ConfigurationError,
    NoIdentificationError,
    ValidationError,
)
from .learners import LearnerSpec

__all__ = [
    "PseudoOutcome",
    "default_beta_min",
    "driv_pseudo_outcome",
    "fit_driv",
    "fit_driv_rw",
    "fit_projected_driv_rw",
    "fit_theta_pre",
    "binary_iv_pipeline",
    "BETA_ZERO_EPS",
    "V_FLOOR",
]

BETA_ZERO_EPS = 1e-12
V_FLOOR = 1e-12


@dataclass
class PseudoOutcome:
    """Doubly robust pseudo-outcome with its clipping audit trail."""

    y_dr: np.ndarray
    clip_count: int
    beta_min: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.y_dr)):
            raise ValidationError("pseudo-outcome contains non-finite values")


def default_beta_min(beta: np.ndarray) -> float:
    """Data-relative clipping level: 1% of the median |beta|, floored."""
    return float(max(1e-6, 0.01 * np.median(np.abs(beta))))


def driv_pseudo_outcome(
    res: Residuals,
    nuisances: NuisanceSet,
    beta_min: float | None = None,
) -> PseudoOutcome:
    """Rowwise pseudo-outcome with |beta| clipped from below at beta_min."""
    if nuisances.theta_pre is None:
        raise ConfigurationError(
            "nuisances carry no preliminary effect estimates (theta_pre); "
            "fit them with fit_theta_pre first"
        )
    if beta_min is None:
        beta_min = default_beta_min(nuisances.beta)
    if beta_min <= 0:
        raise ValidationError(f"beta_min must be positive, got {beta_min}")
    b = nuisances.beta
    clipped = np.abs(b) < beta_min
    sign = np.where(b < 0, -1.0, 1.0)
    b_safe = sign * np.maximum(np.abs(b), beta_min)
    tp = nuisances.theta_pre
    y_dr = tp + (res.y_res - tp * res.t_res) * res.z_res / b_safe
    return PseudoOutcome(y_dr=y_dr, clip_count=int(clipped.sum()),
                         beta_min=float(beta_min))


def fit_driv(
    y_dr,
    X,
    space: str = "linear",
    learner: LearnerSpec | None = None,
    feature_idx=None,
    feature_names=None,
    seed: int = 0,
) -> CateModel:
    """Unweighted square-loss regression of the pseudo-outcome on X."""
    vals = np.asarray(getattr(y_dr, "y_dr", y_dr), dtype=np.float64).ravel()
    return fit_cate_space(space, X, vals, None, learner=learner,
                          feature_idx=feature_idx,
                          feature_names=feature_names, seed=seed)


def _rw_labels_weights(res, nuisances, instrument, strength, floor):
    tp = nuisances.theta_pre
    if tp is None:
        raise ConfigurationError(
            "nuisances carry no preliminary effect estimates (theta_pre)"
        )
    ok = np.abs(strength) >= floor
    weights = np.where(ok, strength**2, 0.0)
    labels = np.zeros_like(strength)
    labels[ok] = tp[ok] + (
        (res.y_res[ok] - tp[ok] * res.t_res[ok]) * instrument[ok] / strength[ok]
    )
    if weights.sum() <= 0:
        raise NoIdentificationError(
            "all reweighting weights are zero: the instrument has no effect "
            "anywhere in-sample"
        )
    return labels, weights


def fit_driv_rw(
    res: Residuals,
    nuisances: NuisanceSet,
    space: str = "linear",
    learner: LearnerSpec | None = None,
    X=None,
    feature_idx=None,
    feature_names=None,
    seed: int = 0,
) -> CateModel:
    """Minimize the beta^2-reweighted loss: weights beta^2 on targets y_dr.

    Rows with |beta| below BETA_ZERO_EPS get exact weight zero, so no beta
    clipping is required.
    """
    if X is None:
        raise ValidationError("fit_driv_rw requires the feature matrix X")
    labels, weights = _rw_labels_weights(
        res, nuisances, res.z_res, nuisances.beta, BETA_ZERO_EPS
    )
    return fit_cate_space(space, X, labels, weights, learner=learner,
                          feature_idx=feature_idx,
                          feature_names=feature_names, seed=seed)


def fit_projected_driv_rw(
    res: Residuals,
    nuisances: NuisanceSet,
    space: str = "linear",
    learner: LearnerSpec | None = None,
    X=None,
    feature_idx=None,
    feature_names=None,
    seed: int = 0,
) -> CateModel:
    """Reweighted fit with the projected instrument z_pi_res and V^2 weights."""
    if X is None:
        raise ValidationError("fit_projected_driv_rw requires the feature matrix X")
    labels, weights = _rw_labels_weights(
        res, nuisances, res.z_pi_res, nuisances.v, V_FLOOR
    )
    return fit_cate_space(space, X, labels, weights, learner=learner,
                          feature_idx=feature_idx,
                          feature_names=feature_names, seed=seed)


def fit_theta_pre(
    data: IvDataset,
    specs: NuisanceLearners,
    plan: SplitPlan,
    nuisances: NuisanceSet,
    space: str = "linear",
    learner: LearnerSpec | None = None,
    fixed_r: float | None = None,
    seed: int = 0,
) -> NuisanceSet:
    """Attach cross-fitted preliminary effect estimates to the nuisances.

    For each fold, the preliminary model is trained on the complement with
    its own nested split (nuisances on one half, weighted regression on the
    residualized complement), then evaluated on the held-out fold.
    """
    theta_pre = np.empty(data.n)
    for k in range(plan.K):
        tr, _ = plan.train_test(k)
        sub = IvDataset(
            X=data.X[tr], T=data.T[tr], Z=data.Z[tr], Y=data.Y[tr],
            column_names=data.column_names,
            binary_treatment=data.binary_treatment,
            binary_instrument=data.binary_instrument,
        )
        sub_plan = make_splits(sub.n, 2, seed=seed * 1000 + k + 1)
        sub_nuis = fit_nuisances(sub, specs, sub_plan, fixed_r=fixed_r)
        model = fit_dmliv(sub, sub_nuis, space=space, learner=learner,
                          seed=seed)
        _, te = plan.train_test(k)
        theta_pre[te] = model.predict(data.X[te])
    nuisances.theta_pre = theta_pre
    return nuisances


def binary_iv_pipeline(
    data: IvDataset,
    specs: NuisanceLearners,
    plan: SplitPlan,
    variant: str = "driv_rw",
    space: str = "linear",
    learner: LearnerSpec | None = None,
    level: float = 0.95,
    fixed_r: float | None = 0.5,
    beta_min: float | None = None,
    theta_pre_zero: bool = False,
    seed: int = 0,
):
    """End-to-end driver for experiments with binary treatment and instrument.

    Returns (CateModel, EstimateWithCI): the effect model in the requested
    space and the constant-projection average effect with its interval.
    """
    if not (data.binary_treatment and data.binary_instrument):
        raise ValidationError(
            "binary_iv_pipeline requires binary treatment and instrument flags"
        )
    if variant not in ("dmliv", "driv", "driv_rw"):
        raise ValidationError(f"unknown variant {variant!r}")
    nuis = fit_nuisances(data, specs, plan, fixed_r=fixed_r)
    res = compute_residuals(data, nuis)
    if variant == "dmliv":
        model = fit_dmliv(data, nuis, space=space, learner=learner, seed=seed)
        labels, weights = dmliv_reduction(res)
        ate = weighted_mean_ci(labels, weights, level=level)
        return model, ate
    if theta_pre_zero:
        nuis.theta_pre = np.zeros(data.n)
    else:
        fit_theta_pre(data, specs, plan, nuis, space=space, learner=learner,
                      fixed_r=fixed_r, seed=seed)
    if variant == "driv":
        pseudo = driv_pseudo_outcome(res, nuis, beta_min=beta_min)
        model = fit_driv(pseudo, data.X, space=space, learner=learner,
                         feature_names=data.column_names, seed=seed)
        ate = estimate_dr_ate(pseudo, level=level)
        return model, ate
    model = fit_driv_rw(res, nuis, space=space, learner=learner, X=data.X,
                        feature_names=data.column_names, seed=seed)
    labels, weights = _rw_labels_weights(
        res, nuis, res.z_res, nuis.beta, BETA_ZERO_EPS
    )
    ate = weighted_mean_ci(labels, weights, level=level)
    return model, ate
