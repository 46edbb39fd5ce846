"""Confidence intervals for parametric projections of the effect function.

``ols_robust`` runs ordinary least squares with heteroskedasticity-consistent
(HC1 sandwich) standard errors and normal-quantile intervals; this is the
inference backend for constant and low-dimensional linear projections of the
doubly robust pseudo-outcome.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr
from scipy.stats import norm

from .exceptions import CollinearityError, ValidationError

__all__ = ["LinearProjectionResult", "ols_robust"]

CONDITION_LIMIT = 1e12


@dataclass
class LinearProjectionResult:
    """OLS coefficients with robust standard errors and intervals."""

    coefficients: np.ndarray
    robust_stderr: np.ndarray
    ci: np.ndarray  # shape (k, 2)
    level: float
    n_used: int
    names: list

    def covers(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        return (self.ci[:, 0] <= values) & (values <= self.ci[:, 1])

    def to_dict(self) -> dict:
        return {
            "coefficients": self.coefficients.tolist(),
            "robust_stderr": self.robust_stderr.tolist(),
            "ci_low": self.ci[:, 0].tolist(),
            "ci_high": self.ci[:, 1].tolist(),
            "level": self.level,
            "n_used": self.n_used,
            "names": list(self.names),
        }


def ols_robust(
    y,
    F,
    level: float = 0.95,
    add_intercept: bool = True,
    names=None,
) -> LinearProjectionResult:
    """OLS of y on F with HC1 sandwich standard errors.

    The HC1 variance is (n/(n-k)) * (F'F)^-1 F' diag(e^2) F (F'F)^-1.
    A design with condition number above 1e12 raises a collinearity error
    naming the offending columns.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    F = np.atleast_2d(np.asarray(F, dtype=np.float64))
    if F.shape[0] != y.shape[0]:
        raise ValidationError("y and F have different numbers of rows")
    n = y.shape[0]
    if add_intercept:
        F = np.column_stack([np.ones(n), F])
        col_names = ["const"] + (
            list(names) if names else [f"x{j}" for j in range(F.shape[1] - 1)]
        )
    else:
        col_names = list(names) if names else [f"x{j}" for j in range(F.shape[1])]
    k = F.shape[1]
    if k >= n:
        raise ValidationError(f"design has k={k} columns but only n={n} rows")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(F))):
        raise ValidationError("non-finite values in the regression inputs")

    sv = np.linalg.svd(F, compute_uv=False)
    if sv[-1] <= 0 or sv[0] / sv[-1] > CONDITION_LIMIT:
        # Pivoted QR flags the columns that add no independent variation.
        _, R, piv = qr(F, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        tol = diag[0] * 1e-10 if diag[0] > 0 else 0.0
        bad = [col_names[piv[i]] for i in range(k) if diag[i] <= tol]
        raise CollinearityError(
            f"design matrix is rank deficient (condition number "
            f"{sv[0] / max(sv[-1], 1e-300):.2e}); offending columns: {bad}",
            columns=bad,
        )

    coef, *_ = np.linalg.lstsq(F, y, rcond=None)
    resid = y - F @ coef
    bread = np.linalg.inv(F.T @ F)
    meat = (F * resid[:, None] ** 2).T @ F
    cov = bread @ meat @ bread * (n / (n - k))
    stderr = np.sqrt(np.diag(cov))
    z = norm.ppf(0.5 + level / 2.0)
    ci = np.column_stack([coef - z * stderr, coef + z * stderr])
    return LinearProjectionResult(
        coefficients=coef, robust_stderr=stderr, ci=ci, level=level,
        n_used=n, names=col_names,
    )
