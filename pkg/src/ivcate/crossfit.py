"""Cross-fitted nuisance estimation and residual assembly.

All nuisance predictions at row i come from models whose training data
excludes the fold containing i. The derived quantities are

    beta(X) = E[T*Z | X] - E[T | X] * E[Z | X]
    V(X)    = E[(E[T | Z, X] - E[T | X])^2 | X]
    Delta(X) = (2Z - 1) * (h(1, X) - h(0, X)) / 2   (binary instrument).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .dataset import IvDataset, SplitPlan
from .exceptions import IvCateError, ValidationError
from .learners import FittedModel, LearnerSpec, fit_classifier, fit_regressor

__all__ = [
    "NuisanceLearners",
    "NuisanceSet",
    "Residuals",
    "fit_nuisances",
    "compliance_delta",
    "h_marginal_p",
    "compute_residuals",
]


@dataclass(frozen=True)
class NuisanceLearners:
    """One LearnerSpec per nuisance regression.

    ``p``/``h`` fall back to classifier or regressor analogues of ``q``
    depending on whether the treatment is binary; ``v`` falls back to ``q``.
    """

    q: LearnerSpec
    p: LearnerSpec | None = None
    r: LearnerSpec | None = None
    h: LearnerSpec | None = None
    f: LearnerSpec | None = None
    v: LearnerSpec | None = None

    @classmethod
    def linear(cls, alpha: float = 1e-3, seed: int = 0) -> "NuisanceLearners":
        """Ridge regressions and L2 logistic classifiers throughout."""
        reg = LearnerSpec.make("ridge", alpha=alpha, seed=seed)
        clf = LearnerSpec.make("logistic_l2", alpha=1e-4, seed=seed)
        return cls(q=reg, p=clf, r=clf, h=clf, f=reg, v=reg)

    @classmethod
    def boosted(cls, seed: int = 0) -> "NuisanceLearners":
        """Gradient-boosted trees with early stopping throughout."""
        reg = LearnerSpec.make("gbt_regressor", seed=seed, n_iter_no_change=5)
        clf = LearnerSpec.make("gbt_classifier", seed=seed, n_iter_no_change=5)
        return cls(q=reg, p=clf, r=clf, h=clf, f=reg, v=reg)

    def resolve(self, data: IvDataset) -> dict:
        out = {"q": self.q, "f": self.f or self.q, "v": self.v or self.q}
        for name, binary in (("p", data.binary_treatment),
                             ("h", data.binary_treatment),
                             ("r", data.binary_instrument)):
            spec = getattr(self, name)
            if spec is None or spec.is_classifier != binary:
                # Fall back to a task-appropriate default when the configured
                # learner does not match the target's type.
                if binary:
                    spec = LearnerSpec.make("logistic_l2", seed=self.q.seed)
                else:
                    spec = self.q
            out[name] = spec
        return out


@dataclass
class NuisanceSet:
    """Out-of-fold nuisance values aligned with the dataset rows."""

    qhat: np.ndarray
    phat: np.ndarray
    rhat: np.ndarray
    hhat: np.ndarray
    fhat: np.ndarray
    beta: np.ndarray
    v: np.ndarray
    delta: np.ndarray | None = None
    theta_pre: np.ndarray | None = None
    h_models: list = field(default_factory=list, repr=False)
    plan: SplitPlan | None = field(default=None, repr=False)

    def __post_init__(self):
        n = self.qhat.shape[0]
        for name in ("phat", "rhat", "hhat", "fhat", "beta", "v"):
            if getattr(self, name).shape[0] != n:
                raise ValidationError(f"nuisance {name} has wrong length")
        self.v = np.clip(self.v, 0.0, None)

    @property
    def n(self) -> int:
        return self.qhat.shape[0]

    def to_csv(self, path):
        cols = {
            "qhat": self.qhat, "phat": self.phat, "rhat": self.rhat,
            "hhat": self.hhat, "fhat": self.fhat, "beta": self.beta,
            "v": self.v,
        }
        if self.delta is not None:
            cols["delta"] = self.delta
        if self.theta_pre is not None:
            cols["theta_pre"] = self.theta_pre
        pd.DataFrame(cols).to_csv(path, index=False)


@dataclass
class Residuals:
    """Centered variables entering every estimating loss."""

    y_res: np.ndarray
    t_res: np.ndarray
    z_res: np.ndarray
    z_pi_res: np.ndarray

    @property
    def n(self) -> int:
        return self.y_res.shape[0]


def _fit_named(name, fit, spec, X, y, w=None):
    try:
        return fit(spec, X, y, w)
    except IvCateError as exc:
        raise type(exc)(f"nuisance {name!r}: {exc}") from exc


def fit_nuisances(
    data: IvDataset,
    specs: NuisanceLearners,
    plan: SplitPlan,
    fixed_r: float | None = None,
) -> NuisanceSet:
    """Fit q, p, r, h, f out-of-fold and derive beta, V (and Delta).

    With a binary instrument, h is fitted as two per-arm models (classifiers
    when the treatment is binary, regressors otherwise) and p, f, beta, V,
    Delta follow from the arm gap in closed form. Otherwise h is a joint
    regression on (Z, X), f is a regression with label T*Z, and V is a
    regression of (h - p)^2 on X.
    """
    if plan.n != data.n:
        raise ValidationError("split plan does not cover the dataset")
    if fixed_r is not None and not (0.0 < fixed_r < 1.0):
        raise ValidationError(f"fixed_r must lie in (0, 1), got {fixed_r}")
    resolved = specs.resolve(data)
    n = data.n
    X, T, Z, Y = data.X, data.T, data.Z, data.Y
    qhat = np.empty(n)
    phat = np.empty(n)
    rhat = np.full(n, fixed_r if fixed_r is not None else np.nan)
    hhat = np.empty(n)
    fhat = np.empty(n)
    v = np.empty(n)
    delta = np.empty(n) if data.binary_instrument else None
    h_models = []
    need_v_pass = not data.binary_instrument

    for k in range(plan.K):
        tr, te = plan.train_test(k)
        qhat[te] = _fit_named("q", fit_regressor, resolved["q"], X[tr], Y[tr]).predict(X[te])
        if fixed_r is None:
            fit_r = fit_classifier if data.binary_instrument else fit_regressor
            rhat[te] = _fit_named("r", fit_r, resolved["r"], X[tr], Z[tr]).predict(X[te])
        if data.binary_instrument:
            fit_h = fit_classifier if data.binary_treatment else fit_regressor
            arm1 = tr[Z[tr] == 1.0]
            arm0 = tr[Z[tr] == 0.0]
            if arm1.size == 0 or arm0.size == 0:
                raise ValidationError(
                    f"fold {k}: an instrument arm is empty in the training folds"
                )
            m1 = _fit_named("h", fit_h, resolved["h"], X[arm1], T[arm1])
            m0 = _fit_named("h", fit_h, resolved["h"], X[arm0], T[arm0])
            h_models.append((m0, m1))
            h1 = m1.predict(X[te])
            h0 = m0.predict(X[te])
            gap = h1 - h0
            r_te = rhat[te]
            hhat[te] = np.where(Z[te] == 1.0, h1, h0)
            phat[te] = r_te * h1 + (1.0 - r_te) * h0
            fhat[te] = r_te * h1
            v[te] = r_te * (1.0 - r_te) * gap**2
            delta[te] = (2.0 * Z[te] - 1.0) * gap / 2.0
        else:
            fit_p = fit_classifier if data.binary_treatment else fit_regressor
            phat[te] = _fit_named("p", fit_p, resolved["p"], X[tr], T[tr]).predict(X[te])
            ZX_tr = np.column_stack([Z[tr], X[tr]])
            ZX_te = np.column_stack([Z[te], X[te]])
            hm = _fit_named("h", fit_regressor, resolved["h"], ZX_tr, T[tr])
            h_models.append(hm)
            hhat[te] = hm.predict(ZX_te)
            fhat[te] = _fit_named(
                "f", fit_regressor, resolved["f"], X[tr], T[tr] * Z[tr]
            ).predict(X[te])

    if need_v_pass:
        sq = (hhat - phat) ** 2
        for k in range(plan.K):
            tr, te = plan.train_test(k)
            v[te] = _fit_named(
                "v", fit_regressor, resolved["v"], X[tr], sq[tr]
            ).predict(X[te])

    beta = fhat - phat * rhat
    return NuisanceSet(
        qhat=qhat, phat=phat, rhat=rhat, hhat=hhat, fhat=fhat,
        beta=beta, v=v, delta=delta, h_models=h_models, plan=plan,
    )


def compliance_delta(h_model: FittedModel, data: IvDataset) -> np.ndarray:
    """Compliance score Delta(X) = (2Z-1)(h(1,X) - h(0,X))/2 for binary Z.

    ``h_model`` must accept stacked (z, x) rows.
    """
    if not np.all(np.isin(data.Z, (0.0, 1.0))):
        raise ValidationError("compliance score requires a binary instrument")
    ones = np.ones(data.n)
    h1 = h_model.predict(np.column_stack([ones, data.X]))
    h0 = h_model.predict(np.column_stack([1.0 - ones, data.X]))
    return (2.0 * data.Z - 1.0) * (h1 - h0) / 2.0


def h_marginal_p(h_model: FittedModel, data: IvDataset) -> np.ndarray:
    """Marginal propensity p(X) = (h(1,X) + h(0,X))/2 under a fair coin Z."""
    if not np.all(np.isin(data.Z, (0.0, 1.0))):
        raise ValidationError("marginal propensity requires a binary instrument")
    ones = np.ones(data.n)
    h1 = h_model.predict(np.column_stack([ones, data.X]))
    h0 = h_model.predict(np.column_stack([1.0 - ones, data.X]))
    return (h1 + h0) / 2.0


def compute_residuals(data: IvDataset, nuisances: NuisanceSet) -> Residuals:
    """Exact pointwise residuals from stored out-of-fold nuisance values."""
    if nuisances.n != data.n:
        raise ValidationError("nuisances are not aligned with the dataset")
    return Residuals(
        y_res=data.Y - nuisances.qhat,
        t_res=data.T - nuisances.phat,
        z_res=data.Z - nuisances.rhat,
        z_pi_res=nuisances.hhat - nuisances.phat,
    )
