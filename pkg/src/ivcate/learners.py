"""Interchangeable regression/classification learners for nuisance fitting.

Every nuisance regression and final-stage hypothesis space is driven by a
:class:`LearnerSpec`, a small serializable description of a model family and
its hyperparameters, fitted into an immutable :class:`FittedModel`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.ensemble import (
    GradientBoostingClassifier,
    GradientBoostingRegressor,
    RandomForestRegressor,
)
from sklearn.linear_model import Lasso, LogisticRegression, Ridge
from sklearn.model_selection import KFold
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from .exceptions import NumericalError, ValidationError

__all__ = [
    "LearnerSpec",
    "FittedModel",
    "fit_regressor",
    "fit_classifier",
    "cross_validate",
    "PROB_CLIP",
]

PROB_CLIP = 1e-6

REGRESSOR_KINDS = {"ols", "ridge", "lasso", "gbt_regressor", "shallow_forest"}
CLASSIFIER_KINDS = {"logistic_l2", "gbt_classifier"}

_VALID_PARAMS = {
    "ols": set(),
    "ridge": {"alpha"},
    "lasso": {"alpha"},
    "logistic_l2": {"alpha"},
    "gbt_regressor": {
        "n_estimators", "learning_rate", "max_depth", "min_samples_leaf",
        "validation_fraction", "n_iter_no_change",
    },
    "gbt_classifier": {
        "n_estimators", "learning_rate", "max_depth", "min_samples_leaf",
        "validation_fraction", "n_iter_no_change",
    },
    "shallow_forest": {"n_estimators", "max_depth", "min_samples_leaf"},
}


@dataclass(frozen=True)
class LearnerSpec:
    """Serializable, hashable description of one learner configuration."""

    kind: str
    params: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if self.kind not in REGRESSOR_KINDS | CLASSIFIER_KINDS:
            raise ValidationError(f"unknown learner kind {self.kind!r}")
        object.__setattr__(self, "params", tuple(sorted(dict(self.params).items())))
        valid = _VALID_PARAMS[self.kind]
        for name, value in self.params:
            if name not in valid:
                raise ValidationError(
                    f"{self.kind} does not accept hyperparameter {name!r}"
                )
            if name in ("alpha", "learning_rate") and value < 0:
                raise ValidationError(f"{name} must be >= 0, got {value}")
            if name in ("n_estimators", "max_depth", "min_samples_leaf") and value < 1:
                raise ValidationError(f"{name} must be >= 1, got {value}")

    @classmethod
    def make(cls, kind: str, seed: int = 0, **params) -> "LearnerSpec":
        return cls(kind=kind, params=tuple(params.items()), seed=seed)

    @property
    def hyper(self) -> dict:
        return dict(self.params)

    @property
    def is_classifier(self) -> bool:
        return self.kind in CLASSIFIER_KINDS

    def to_dict(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, **self.hyper}

    @classmethod
    def from_dict(cls, d: dict) -> "LearnerSpec":
        d = dict(d)
        kind = d.pop("kind")
        seed = int(d.pop("seed", 0))
        return cls.make(kind, seed=seed, **d)


class FittedModel:
    """Immutable fitted learner; ``predict`` maps an (m, d) matrix to m reals.

    Classifier predictions are probabilities of class 1, clipped into
    [PROB_CLIP, 1 - PROB_CLIP].
    """

    def __init__(self, spec, feature_dim, model=None, constant=None):
        self._spec = spec
        self._feature_dim = int(feature_dim)
        self._model = model
        self._constant = constant

    @property
    def spec(self) -> LearnerSpec:
        return self._spec

    @property
    def feature_dim(self) -> int:
        return self._feature_dim

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self._feature_dim:
            raise ValidationError(
                f"model expects {self._feature_dim} features, got {X.shape[1]}"
            )
        if self._constant is not None:
            return np.full(X.shape[0], self._constant)
        if self._spec.is_classifier:
            p = self._model.predict_proba(X)[:, 1]
            return np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)
        return self._model.predict(X)


def _check_xy(X, y, w=None):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.shape[0] != y.shape[0]:
        raise ValidationError("X and y have different numbers of rows")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValidationError("non-finite values in training data")
    if w is not None:
        w = np.asarray(w, dtype=np.float64).ravel()
        if w.shape[0] != y.shape[0]:
            raise ValidationError("weights length mismatch")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValidationError("weights must be finite and nonnegative")
        if w.sum() <= 0:
            raise ValidationError("weights must not all be zero")
    return X, y, w


def _ols_fit(X, y, w):
    n = X.shape[0]
    F = np.column_stack([np.ones(n), X])
    sw = np.ones(n) if w is None else np.sqrt(w)
    Fw = F * sw[:, None]
    yw = y * sw
    rank = np.linalg.matrix_rank(Fw)
    if rank < F.shape[1]:
        raise NumericalError(
            "singular design matrix in unpenalized least squares; "
            "consider ridge regularization"
        )
    coef, *_ = np.linalg.lstsq(Fw, yw, rcond=None)
    return coef


class _OlsModel:
    def __init__(self, coef):
        self.coef = coef

    def predict(self, X):
        return self.coef[0] + X @ self.coef[1:]


def _scaled_leaf(requested, n):
    """Scale a minimum-leaf-size default down for small samples."""
    return int(max(1, min(requested, max(1, n // 20))))


def _build_regressor(spec: LearnerSpec, n: int):
    h = spec.hyper
    if spec.kind == "ridge":
        return Ridge(alpha=h.get("alpha", 1.0), random_state=spec.seed)
    if spec.kind == "lasso":
        return Lasso(
            alpha=h.get("alpha", 0.01), tol=1e-7, max_iter=10000,
            random_state=spec.seed,
        )
    if spec.kind == "gbt_regressor":
        nic = h.get("n_iter_no_change", None)
        return GradientBoostingRegressor(
            n_estimators=int(h.get("n_estimators", 100)),
            learning_rate=h.get("learning_rate", 0.1),
            max_depth=int(h.get("max_depth", 3)),
            min_samples_leaf=_scaled_leaf(int(h.get("min_samples_leaf", 20)), n),
            validation_fraction=h.get("validation_fraction", 0.1),
            n_iter_no_change=int(nic) if nic else None,
            random_state=spec.seed,
        )
    if spec.kind == "shallow_forest":
        return RandomForestRegressor(
            n_estimators=int(h.get("n_estimators", 200)),
            max_depth=int(h.get("max_depth", 1)),
            min_samples_leaf=_scaled_leaf(
                int(h.get("min_samples_leaf", max(50, n // 50))), n
            ),
            random_state=spec.seed,
        )
    raise ValidationError(f"{spec.kind} is not a regressor kind")


def fit_regressor(spec: LearnerSpec, X, y, w=None) -> FittedModel:
    """Fit a (weighted) square-loss regressor described by ``spec``."""
    X, y, w = _check_xy(X, y, w)
    if spec.kind in CLASSIFIER_KINDS:
        raise ValidationError(f"{spec.kind} is a classifier; use fit_classifier")
    if spec.kind == "ols":
        coef = _ols_fit(X, y, w)
        return FittedModel(spec, X.shape[1], model=_OlsModel(coef))
    model = _build_regressor(spec, X.shape[0])
    if w is not None:
        model.fit(X, y, sample_weight=w)
    else:
        model.fit(X, y)
    return FittedModel(spec, X.shape[1], model=model)


def fit_classifier(spec: LearnerSpec, X, y, w=None) -> FittedModel:
    """Fit a binary classifier; predictions are clipped probabilities."""
    X, y, w = _check_xy(X, y, w)
    labels = np.unique(y)
    if not np.all(np.isin(labels, (0.0, 1.0))):
        raise ValidationError("classifier labels must be binary 0/1")
    if spec.kind in REGRESSOR_KINDS:
        raise ValidationError(f"{spec.kind} is a regressor; use fit_regressor")
    if labels.size == 1:
        p = float(np.clip(labels[0], PROB_CLIP, 1.0 - PROB_CLIP))
        return FittedModel(spec, X.shape[1], constant=p)
    h = spec.hyper
    if spec.kind == "logistic_l2":
        alpha = h.get("alpha", 1e-4)
        # Standardization keeps the solver well conditioned when feature
        # scales differ by orders of magnitude; predictions are unchanged
        # up to the (tiny) penalty's reparameterization.
        model = make_pipeline(
            StandardScaler(),
            LogisticRegression(
                C=1.0 / max(alpha, 1e-12), max_iter=1000,
                random_state=spec.seed,
            ),
        )
    else:
        nic = h.get("n_iter_no_change", None)
        model = GradientBoostingClassifier(
            n_estimators=int(h.get("n_estimators", 100)),
            learning_rate=h.get("learning_rate", 0.1),
            max_depth=int(h.get("max_depth", 3)),
            min_samples_leaf=_scaled_leaf(
                int(h.get("min_samples_leaf", 20)), X.shape[0]
            ),
            validation_fraction=h.get("validation_fraction", 0.1),
            n_iter_no_change=int(nic) if nic else None,
            random_state=spec.seed,
        )
    if w is not None:
        model.fit(X, y, sample_weight=w)
    else:
        model.fit(X, y)
    return FittedModel(spec, X.shape[1], model=model)


def cross_validate(grid, X, y, k: int = 3) -> LearnerSpec:
    """Pick the grid element with smallest mean out-of-fold loss.

    RMSE for regressors, log-loss for classifiers; ties break toward the
    earliest grid position.
    """
    if not grid:
        raise ValidationError("learner grid must be nonempty")
    if k < 2:
        raise ValidationError(f"k must be >= 2, got {k}")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    if k > X.shape[0]:
        raise ValidationError(f"k={k} exceeds sample size {X.shape[0]}")
    if len(grid) == 1:
        return grid[0]
    classify = grid[0].is_classifier
    if any(s.is_classifier != classify for s in grid):
        raise ValidationError("grid mixes regressor and classifier kinds")
    kf = KFold(n_splits=k, shuffle=True, random_state=grid[0].seed)
    losses = np.zeros(len(grid))
    for tr, te in kf.split(X):
        for i, spec in enumerate(grid):
            if classify:
                m = fit_classifier(spec, X[tr], y[tr])
                p = m.predict(X[te])
                losses[i] += -np.mean(
                    y[te] * np.log(p) + (1 - y[te]) * np.log(1 - p)
                )
            else:
                m = fit_regressor(spec, X[tr], y[tr])
                losses[i] += np.sqrt(np.mean((y[te] - m.predict(X[te])) ** 2))
    return grid[int(np.argmin(losses))]
