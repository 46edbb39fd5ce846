"""Estimator-style front end composing the functional modules.

These classes follow the scikit-learn conventions (constructor parameters
mirrored by ``get_params``/``set_params``, a ``fit`` method, fitted
attributes with trailing underscores). ``fit`` takes the outcome as ``y``
and the treatment/instrument as keyword arrays; ``predict`` evaluates the
fitted effect function.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .ate import estimate_dmlateiv, estimate_dr_ate, weighted_mean_ci
from .crossfit import NuisanceLearners, compute_residuals, fit_nuisances
from .dataset import IvDataset, make_splits
from .dmliv import dmliv_reduction, fit_dmliv, overlap_diagnostic
from .driv import (
    _rw_labels_weights,
    driv_pseudo_outcome,
    fit_driv,
    fit_driv_rw,
    fit_projected_driv_rw,
    fit_theta_pre,
)
from .exceptions import ValidationError

__all__ = ["IvCateEstimator", "DmlAteIv"]

VARIANTS = ("dmliv", "driv", "driv_rw", "projected_driv_rw")


class IvCateEstimator(BaseEstimator):
    """Heterogeneous effect estimation with an instrument.

    Parameters
    ----------
    variant : one of {"dmliv", "driv", "driv_rw", "projected_driv_rw"}.
    space : hypothesis space for the effect function.
    folds : cross-fitting fold count (>= 2).
    seed : controls splitting and any stochastic learners.
    level : confidence level for the average-effect interval.
    nuisances : "linear", "boosted", or a NuisanceLearners instance.
    fixed_r : known instrument propensity (e.g. 0.5 in a fair-coin design).
    binary : validate treatment and instrument as binary 0/1.
    beta_min : clipping level for the pseudo-outcome denominator
        (None picks a data-relative default).
    feature_idx : column subset for the linear_subset space.
    """

    def __init__(self, variant="driv", space="linear", folds=2, seed=0,
                 level=0.95, nuisances="linear", fixed_r=None, binary=False,
                 beta_min=None, feature_idx=None):
        self.variant = variant
        self.space = space
        self.folds = folds
        self.seed = seed
        self.level = level
        self.nuisances = nuisances
        self.fixed_r = fixed_r
        self.binary = binary
        self.beta_min = beta_min
        self.feature_idx = feature_idx

    def _specs(self) -> NuisanceLearners:
        if isinstance(self.nuisances, NuisanceLearners):
            return self.nuisances
        if self.nuisances == "linear":
            return NuisanceLearners.linear(seed=self.seed)
        if self.nuisances == "boosted":
            return NuisanceLearners.boosted(seed=self.seed)
        raise ValidationError(f"unknown nuisance preset {self.nuisances!r}")

    def fit(self, X, y, *, treatment, instrument):
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown variant {self.variant!r}")
        data = IvDataset(X=X, T=treatment, Z=instrument, Y=y,
                         binary_treatment=self.binary,
                         binary_instrument=self.binary)
        specs = self._specs()
        plan = make_splits(data.n, self.folds, seed=self.seed)
        nuis = fit_nuisances(data, specs, plan, fixed_r=self.fixed_r)
        res = compute_residuals(data, nuis)
        if self.variant == "dmliv":
            self.model_ = fit_dmliv(data, nuis, space=self.space,
                                    feature_idx=self.feature_idx,
                                    seed=self.seed)
            labels, weights = dmliv_reduction(res)
            self.ate_ = weighted_mean_ci(labels, weights, level=self.level)
        else:
            fit_theta_pre(data, specs, plan, nuis, space="linear",
                          fixed_r=self.fixed_r, seed=self.seed)
            if self.variant == "driv":
                pseudo = driv_pseudo_outcome(res, nuis,
                                             beta_min=self.beta_min)
                self.clip_count_ = pseudo.clip_count
                self.model_ = fit_driv(pseudo, data.X, space=self.space,
                                       feature_idx=self.feature_idx,
                                       seed=self.seed)
                self.ate_ = estimate_dr_ate(pseudo, level=self.level)
            elif self.variant == "driv_rw":
                self.model_ = fit_driv_rw(res, nuis, space=self.space,
                                          X=data.X,
                                          feature_idx=self.feature_idx,
                                          seed=self.seed)
                labels, weights = _rw_labels_weights(
                    res, nuis, res.z_res, nuis.beta, 1e-12)
                self.ate_ = weighted_mean_ci(labels, weights,
                                             level=self.level)
            else:
                self.model_ = fit_projected_driv_rw(
                    res, nuis, space=self.space, X=data.X,
                    feature_idx=self.feature_idx, seed=self.seed)
                labels, weights = _rw_labels_weights(
                    res, nuis, res.z_pi_res, nuis.v, 1e-12)
                self.ate_ = weighted_mean_ci(labels, weights,
                                             level=self.level)
        self.nuisances_ = nuis
        self.overlap_ = overlap_diagnostic(nuis, X=data.X)
        self.n_features_in_ = data.d
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "model_"):
            raise ValidationError("estimator is not fitted")
        return self.model_.predict(X)


class DmlAteIv(BaseEstimator):
    """Constant-effect orthogonal-moment estimator with an influence CI."""

    def __init__(self, folds=2, seed=0, level=0.95, nuisances="linear",
                 fixed_r=None, binary=False):
        self.folds = folds
        self.seed = seed
        self.level = level
        self.nuisances = nuisances
        self.fixed_r = fixed_r
        self.binary = binary

    def fit(self, X, y, *, treatment, instrument):
        data = IvDataset(X=X, T=treatment, Z=instrument, Y=y,
                         binary_treatment=self.binary,
                         binary_instrument=self.binary)
        if isinstance(self.nuisances, NuisanceLearners):
            specs = self.nuisances
        elif self.nuisances == "boosted":
            specs = NuisanceLearners.boosted(seed=self.seed)
        else:
            specs = NuisanceLearners.linear(seed=self.seed)
        plan = make_splits(data.n, self.folds, seed=self.seed)
        nuis = fit_nuisances(data, specs, plan, fixed_r=self.fixed_r)
        res = compute_residuals(data, nuis)
        self.ate_ = estimate_dmlateiv(res, level=self.level)
        self.nuisances_ = nuis
        self.n_features_in_ = data.d
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "ate_"):
            raise ValidationError("estimator is not fitted")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.full(X.shape[0], self.ate_.point)
