"""Preliminary effect-function estimation via a weighted-regression reduction.

The partially orthogonal loss over candidate effect functions theta,

    L1(theta) = E[(y_res - theta(X) * gamma(X, Z))^2],  gamma = hhat - phat,

is minimized by a standard weighted square-loss regression with labels
y_res / gamma and weights gamma^2; rows where gamma vanishes get weight 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.linear_model import Lasso

from .crossfit import NuisanceSet, Residuals, compute_residuals
from .dataset import IvDataset
from .exceptions import NoIdentificationError, ValidationError
from .learners import LearnerSpec, fit_regressor

__all__ = [
    "CateModel",
    "OverlapDiagnostics",
    "dmliv_reduction",
    "fit_dmliv",
    "overlap_diagnostic",
    "fit_cate_space",
    "GAMMA_EPS",
]

GAMMA_EPS = 1e-9

SPACES = ("constant", "linear", "linear_subset", "tree_ensemble", "lasso_linear")


class _TreePredictor:
    """A single regression tree stored as flat node arrays."""

    def __init__(self, children_left, children_right, feature, threshold, value):
        self.children_left = np.asarray(children_left, dtype=np.intp)
        self.children_right = np.asarray(children_right, dtype=np.intp)
        self.feature = np.asarray(feature, dtype=np.intp)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.value = np.asarray(value, dtype=np.float64)

    @classmethod
    def from_sklearn(cls, tree):
        t = tree.tree_
        return cls(t.children_left, t.children_right, t.feature,
                   t.threshold, t.value.ravel())

    def predict(self, X):
        idx = np.zeros(X.shape[0], dtype=np.intp)
        while True:
            rows = np.flatnonzero(self.children_left[idx] != -1)
            if rows.size == 0:
                break
            nodes = idx[rows]
            go_left = X[rows, self.feature[nodes]] <= self.threshold[nodes]
            idx[rows] = np.where(go_left, self.children_left[nodes],
                                 self.children_right[nodes])
        return self.value[idx]

    def to_dict(self):
        return {
            "children_left": self.children_left.tolist(),
            "children_right": self.children_right.tolist(),
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "value": self.value.tolist(),
        }


class _TreeEnsemble:
    """Additive or averaged collection of _TreePredictor objects."""

    def __init__(self, trees, combiner, init, learning_rate, importances):
        self.trees = trees
        self.combiner = combiner  # "sum" (boosting) or "mean" (forest)
        self.init = float(init)
        self.learning_rate = float(learning_rate)
        self.importances = np.asarray(importances, dtype=np.float64)

    @classmethod
    def from_sklearn(cls, model):
        if hasattr(model, "estimators_") and hasattr(model, "learning_rate"):
            trees = [_TreePredictor.from_sklearn(t[0]) for t in model.estimators_]
            init = model.init_.constant_[0, 0] if hasattr(model.init_, "constant_") else 0.0
            return cls(trees, "sum", init, model.learning_rate,
                       model.feature_importances_)
        trees = [_TreePredictor.from_sklearn(t) for t in model.estimators_]
        return cls(trees, "mean", 0.0, 1.0, model.feature_importances_)

    def predict(self, X):
        if not self.trees:
            return np.full(X.shape[0], self.init)
        preds = np.stack([t.predict(X) for t in self.trees])
        if self.combiner == "sum":
            return self.init + self.learning_rate * preds.sum(axis=0)
        return preds.mean(axis=0)

    def to_dict(self):
        return {
            "combiner": self.combiner,
            "init": self.init,
            "learning_rate": self.learning_rate,
            "importances": self.importances.tolist(),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d):
        trees = [_TreePredictor(**t) for t in d["trees"]]
        return cls(trees, d["combiner"], d["init"], d["learning_rate"],
                   d["importances"])


@dataclass
class CateModel:
    """A fitted effect function theta-hat from a declared hypothesis space."""

    space: str
    value: float | None = None
    intercept: float | None = None
    coef: np.ndarray | None = None
    feature_idx: list | None = None
    ensemble: _TreeEnsemble | None = field(default=None, repr=False)
    feature_names: list = field(default_factory=list)

    def __post_init__(self):
        if self.space not in SPACES:
            raise ValidationError(f"unknown hypothesis space {self.space!r}")
        if self.coef is not None:
            self.coef = np.asarray(self.coef, dtype=np.float64)

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.space == "constant":
            return np.full(X.shape[0], self.value)
        if self.space in ("linear", "lasso_linear"):
            return self.intercept + X @ self.coef
        if self.space == "linear_subset":
            return self.intercept + X[:, self.feature_idx] @ self.coef
        return self.ensemble.predict(X)

    @property
    def coefficients(self) -> np.ndarray:
        """Intercept-first coefficient vector for parametric spaces."""
        if self.space == "constant":
            return np.array([self.value])
        if self.coef is None:
            raise ValidationError(f"space {self.space!r} has no coefficients")
        return np.concatenate([[self.intercept], self.coef])

    def feature_importances(self) -> np.ndarray:
        """Split-gain importances (tree spaces) or |coef| (linear spaces)."""
        if self.space == "tree_ensemble":
            return self.ensemble.importances
        if self.space == "constant":
            return np.array([])
        return np.abs(self.coef)

    def to_json_dict(self) -> dict:
        d = {"space": self.space, "feature_names": list(self.feature_names)}
        if self.space == "constant":
            d["value"] = self.value
        elif self.space == "tree_ensemble":
            d["ensemble"] = self.ensemble.to_dict()
        else:
            d["intercept"] = self.intercept
            d["coef"] = self.coef.tolist()
            if self.feature_idx is not None:
                d["feature_idx"] = list(self.feature_idx)
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "CateModel":
        space = d["space"]
        kw = {"space": space, "feature_names": d.get("feature_names", [])}
        if space == "constant":
            kw["value"] = d["value"]
        elif space == "tree_ensemble":
            kw["ensemble"] = _TreeEnsemble.from_dict(d["ensemble"])
        else:
            kw["intercept"] = d["intercept"]
            kw["coef"] = np.asarray(d["coef"])
            kw["feature_idx"] = d.get("feature_idx")
        return cls(**kw)


def dmliv_reduction(res: Residuals):
    """Labels and weights of the weighted-regression form of the loss.

    Rows with |gamma| < GAMMA_EPS get label 0 and weight 0; they contribute
    nothing to the loss either way.
    """
    gamma = res.z_pi_res
    weights = gamma**2
    ok = np.abs(gamma) >= GAMMA_EPS
    labels = np.zeros_like(gamma)
    labels[ok] = res.y_res[ok] / gamma[ok]
    weights = np.where(ok, weights, 0.0)
    return labels, weights


def fit_cate_space(
    space: str,
    X: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray | None,
    learner: LearnerSpec | None = None,
    feature_idx=None,
    feature_names=None,
    seed: int = 0,
) -> CateModel:
    """Weighted square-loss minimization over a hypothesis space.

    Parametric spaces are solved exactly by weighted least squares; tree
    spaces delegate to the given (or a default boosted) learner spec.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.float64).ravel()
    n = X.shape[0]
    if weights is None:
        weights = np.ones(n)
    weights = np.asarray(weights, dtype=np.float64).ravel()
    if weights.sum() <= 0:
        raise NoIdentificationError(
            "all sample weights are zero: the instrument has no effect "
            "anywhere in-sample"
        )
    names = list(feature_names) if feature_names else [
        f"x{j}" for j in range(X.shape[1])
    ]
    if space == "constant":
        return CateModel(space="constant",
                         value=float(np.sum(weights * labels) / weights.sum()),
                         feature_names=names)
    if space in ("linear", "linear_subset"):
        if space == "linear_subset":
            if feature_idx is None:
                raise ValidationError("linear_subset requires feature_idx")
            feature_idx = list(feature_idx)
            F = X[:, feature_idx]
            sub_names = [names[j] for j in feature_idx]
        else:
            F = X
            sub_names = names
        D = np.column_stack([np.ones(n), F])
        sw = np.sqrt(weights)
        coef, *_ = np.linalg.lstsq(D * sw[:, None], labels * sw, rcond=None)
        return CateModel(space=space, intercept=float(coef[0]), coef=coef[1:],
                         feature_idx=feature_idx if space == "linear_subset" else None,
                         feature_names=sub_names)
    if space == "lasso_linear":
        # Penalty c/sqrt(n); the constant c picked by 3-fold CV on a small grid.
        grid = [0.01, 0.1, 1.0] if learner is None else [
            learner.hyper.get("alpha", 0.1)
        ]
        best, best_loss = None, np.inf
        rng = np.random.default_rng(seed)
        folds = rng.permutation(n) % 3
        for c in grid:
            loss = 0.0
            for k in range(3):
                tr, te = folds != k, folds == k
                m = Lasso(alpha=c / np.sqrt(n), tol=1e-7, max_iter=10000)
                m.fit(X[tr], labels[tr], sample_weight=weights[tr])
                err = labels[te] - m.predict(X[te])
                loss += np.sum(weights[te] * err**2)
            if loss < best_loss - 1e-12:
                best, best_loss = c, loss
        m = Lasso(alpha=best / np.sqrt(n), tol=1e-7, max_iter=10000)
        m.fit(X, labels, sample_weight=weights)
        return CateModel(space="lasso_linear", intercept=float(m.intercept_),
                         coef=m.coef_, feature_names=names)
    if space == "tree_ensemble":
        spec = learner or LearnerSpec.make(
            "gbt_regressor", seed=seed, max_depth=2, n_estimators=100
        )
        fitted = fit_regressor(spec, X, labels, w=weights)
        return CateModel(space="tree_ensemble",
                         ensemble=_TreeEnsemble.from_sklearn(fitted._model),
                         feature_names=names)
    raise ValidationError(f"unknown hypothesis space {space!r}")


def fit_dmliv(
    data: IvDataset,
    nuisances: NuisanceSet,
    space: str = "linear",
    learner: LearnerSpec | None = None,
    feature_idx=None,
    seed: int = 0,
) -> CateModel:
    """Minimize the empirical preliminary loss over the chosen space."""
    res = compute_residuals(data, nuisances)
    labels, weights = dmliv_reduction(res)
    return fit_cate_space(space, data.X, labels, weights, learner=learner,
                          feature_idx=feature_idx,
                          feature_names=data.column_names, seed=seed)


@dataclass(frozen=True)
class OverlapDiagnostics:
    """Instrument-strength summary of V-hat and the design eigenvalue."""

    lambda0: float
    v_min: float
    v_p05: float
    v_mean: float

    @property
    def weak(self) -> bool:
        return self.lambda0 < 1e-6

    def to_dict(self) -> dict:
        return {"lambda0": self.lambda0, "v_min": self.v_min,
                "v_p05": self.v_p05, "v_mean": self.v_mean,
                "weak": self.weak}


def overlap_diagnostic(nuisances: NuisanceSet, X=None) -> OverlapDiagnostics:
    """Summarize V-hat; with features given, also the minimum eigenvalue of
    the V-weighted linear design (1/n) sum V(x_i) phi(x_i) phi(x_i)^T with
    phi = (1, x)."""
    v = nuisances.v
    if X is not None:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        phi = np.column_stack([np.ones(X.shape[0]), X])
        M = (phi * v[:, None]).T @ phi / X.shape[0]
        lam = float(np.linalg.eigvalsh(M)[0])
    else:
        lam = float(np.min(v))
    return OverlapDiagnostics(
        lambda0=lam,
        v_min=float(np.min(v)),
        v_p05=float(np.quantile(v, 0.05)),
        v_mean=float(np.mean(v)),
    )
