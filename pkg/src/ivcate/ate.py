"""Average-effect estimators on residualized data.

``estimate_dmlateiv`` implements the constant-effect orthogonal moment

    theta = sum(y_res * z_res) / sum(t_res * z_res)

with an influence-function confidence interval; ``estimate_dr_ate`` averages
a doubly robust pseudo-outcome.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .exceptions import ValidationError, WeakInstrumentError

__all__ = ["EstimateWithCI", "estimate_dmlateiv", "estimate_dr_ate",
           "weighted_mean_ci", "RELEVANCE_THRESHOLD"]

RELEVANCE_THRESHOLD = 1e-10


@dataclass(frozen=True)
class EstimateWithCI:
    """A point estimate with a normal-quantile confidence interval."""

    point: float
    stderr: float
    ci_low: float
    ci_high: float
    level: float
    n_used: int

    def __post_init__(self):
        if not (0.0 < self.level < 1.0):
            raise ValidationError(f"level must lie in (0,1), got {self.level}")
        if self.stderr < 0:
            raise ValidationError("stderr must be nonnegative")

    def covers(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high

    @property
    def width(self) -> float:
        return self.ci_high - self.ci_low

    def to_dict(self) -> dict:
        return {
            "point": self.point, "stderr": self.stderr,
            "ci_low": self.ci_low, "ci_high": self.ci_high,
            "level": self.level, "n_used": self.n_used,
        }


def _with_ci(point, stderr, level, n) -> EstimateWithCI:
    z = norm.ppf(0.5 + level / 2.0)
    return EstimateWithCI(
        point=float(point), stderr=float(stderr),
        ci_low=float(point - z * stderr), ci_high=float(point + z * stderr),
        level=level, n_used=int(n),
    )


def estimate_dmlateiv(res, level: float = 0.95) -> EstimateWithCI:
    """Constant-effect IV estimate from residualized (y, t, z)."""
    y, t, z = res.y_res, res.t_res, res.z_res
    n = y.shape[0]
    tz = t * z
    denom = float(np.mean(tz))
    if abs(denom) <= RELEVANCE_THRESHOLD:
        raise WeakInstrumentError(
            f"first-stage strength |mean(t_res*z_res)| = {abs(denom):.3e} "
            f"is at or below the relevance threshold {RELEVANCE_THRESHOLD:.0e}"
        )
    theta = float(np.sum(y * z) / np.sum(tz))
    psi = (y - theta * t) * z / denom
    stderr = float(np.std(psi, ddof=1) / np.sqrt(n))
    return _with_ci(theta, stderr, level, n)


def estimate_dr_ate(y_dr, level: float = 0.95) -> EstimateWithCI:
    """Mean of a doubly robust pseudo-outcome with its asymptotic CI."""
    vals = np.asarray(getattr(y_dr, "y_dr", y_dr), dtype=np.float64).ravel()
    if not np.all(np.isfinite(vals)):
        raise ValidationError("pseudo-outcome contains non-finite values")
    n = vals.shape[0]
    point = float(np.mean(vals))
    stderr = float(np.std(vals, ddof=1) / np.sqrt(n))
    return _with_ci(point, stderr, level, n)


def weighted_mean_ci(labels, weights, level: float = 0.95) -> EstimateWithCI:
    """Weighted mean with an influence-function CI (weights fixed)."""
    labels = np.asarray(labels, dtype=np.float64).ravel()
    weights = np.asarray(weights, dtype=np.float64).ravel()
    wsum = weights.sum()
    if wsum <= 0:
        raise ValidationError("weights must not all be zero")
    n = labels.shape[0]
    point = float(np.sum(weights * labels) / wsum)
    psi = weights * (labels - point) / (wsum / n)
    stderr = float(np.std(psi, ddof=1) / np.sqrt(n))
    return _with_ci(point, stderr, level, n)
