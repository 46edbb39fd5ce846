"""Semi-synthetic data generating processes with known effect functions.

Three families:

- ``tripadvisor``: visit-frequency covariates, a randomized binary instrument
  with very low compliance, effect 0.2 + 0.1*X[0] - 2.7*X[6].
- ``coverage``: same covariates with stronger compliance and endogeneity,
  effect 0.8 + 0.5*X[0] - 3*X[7]; used for the coverage experiments.
- ``nlsym``: schooling-style continuous treatment with a binary instrument,
  effect 0.1 + 0.05*X[4] - 0.1*X[7].

Every generator returns (IvDataset, GroundTruth) and is deterministic per
seed. ``oracle_for`` evaluates the exact nuisance functions of the binary
families on a feature sample, which the verification harness uses to test
orthogonality without estimation noise.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

from .dataset import IvDataset
from .exceptions import SchemaError, ValidationError

__all__ = [
    "DgpSpec",
    "GroundTruth",
    "DgpOracle",
    "gen_tripadvisor",
    "gen_coverage",
    "gen_nlsym_semi",
    "generate",
    "oracle_for",
]

FAMILIES = ("tripadvisor", "coverage", "nlsym")

_FAMILY_DEFAULTS = {
    # (theta coefs on (1, X[a], X[b]), (a, b), endogeneity coef,
    #  complier scale, noncomplier prob, X[0] outcome coef, noise scale)
    "tripadvisor": ((0.2, 0.1, -2.7), (0, 6), 0.1, 0.017, 0.006, 0.4, 2.0),
    "coverage": ((0.8, 0.5, -3.0), (0, 7), 0.2, 0.2, 0.1, 0.1, 0.1),
}


@dataclass(frozen=True)
class DgpSpec:
    """Recipe for one synthetic dataset; recorded verbatim in reports."""

    family: str
    n: int
    seed: int = 0
    endogeneity_coef: float | None = None
    theta_coefs: tuple | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown DGP family {self.family!r}")
        if self.n < 100:
            raise ValidationError(f"n must be >= 100, got {self.n}")
        if self.theta_coefs is not None:
            object.__setattr__(self, "theta_coefs", tuple(self.theta_coefs))

    def to_dict(self) -> dict:
        return {
            "family": self.family, "n": self.n, "seed": self.seed,
            "endogeneity_coef": self.endogeneity_coef,
            "theta_coefs": list(self.theta_coefs) if self.theta_coefs else None,
        }


@dataclass
class GroundTruth:
    """The effect function and its average, known exactly by construction."""

    theta_fn: Callable[[np.ndarray], np.ndarray]
    true_ate: float
    precision: float = 1e-9
    info: dict = field(default_factory=dict)


def _softplus(a):
    return np.logaddexp(0.0, a)


def _mean_complier_prob(x0, scale):
    """E_nu[scale * expit(0.1 * (x0 + nu))] for nu ~ U[0, 10], in closed form."""
    return scale * (_softplus(0.1 * (x0 + 10.0)) - _softplus(0.1 * x0))


def _visit_covariates(rng, n):
    """Shared 10-column covariate block for the binary-instrument families.

    Columns 0-5: integer day counts uniform on {0..28}; 6: locale indicator;
    7-8: dummies for a 3-level platform (baseline level dropped);
    9: lognormal revenue.
    """
    days = rng.integers(0, 29, size=(n, 6)).astype(np.float64)
    locale = rng.binomial(1, 0.5, size=n).astype(np.float64)
    platform = rng.integers(0, 3, size=n)
    os1 = (platform == 1).astype(np.float64)
    os2 = (platform == 2).astype(np.float64)
    revenue = rng.lognormal(mean=0.0, sigma=3.0, size=n)
    X = np.column_stack([days, locale, os1, os2, revenue])
    names = [f"days_{j}" for j in range(6)] + [
        "locale", "os_a", "os_b", "revenue"
    ]
    return X, names


def _gen_binary_family(spec: DgpSpec):
    coefs_d, (a, b), endo_d, scale, base, xcoef, noise = _FAMILY_DEFAULTS[
        spec.family
    ]
    coefs = spec.theta_coefs if spec.theta_coefs is not None else coefs_d
    if len(coefs) != 3:
        raise ValidationError("theta_coefs must have exactly 3 entries")
    endo = (spec.endogeneity_coef if spec.endogeneity_coef is not None
            else endo_d)
    rng = np.random.default_rng(spec.seed)
    n = spec.n
    X, names = _visit_covariates(rng, n)

    def theta_fn(Xm):
        Xm = np.atleast_2d(np.asarray(Xm, dtype=np.float64))
        return coefs[0] + coefs[1] * Xm[:, a] + coefs[2] * Xm[:, b]

    Z = rng.binomial(1, 0.5, size=n).astype(np.float64)
    nu = rng.uniform(0.0, 10.0, size=n)
    p_comply = scale * expit(0.1 * (X[:, 0] + nu))
    C = rng.binomial(1, p_comply).astype(np.float64)
    C0 = rng.binomial(1, base, size=n).astype(np.float64)
    T = C * Z + C0 * (1.0 - Z)
    U = rng.uniform(0.0, 1.0, size=n)
    theta = theta_fn(X)
    Y = theta * (T + endo * nu) + xcoef * X[:, 0] + noise * U

    data = IvDataset(X=X, T=T, Z=Z, Y=Y, column_names=names,
                     binary_treatment=True, binary_instrument=True)
    marg_b = 0.5 if b == 6 else 1.0 / 3.0
    true_ate = coefs[0] + coefs[1] * 14.0 + coefs[2] * marg_b
    truth = GroundTruth(theta_fn=theta_fn, true_ate=float(true_ate),
                        precision=1e-9,
                        info={"endogeneity_coef": endo,
                              "theta_coefs": list(coefs)})
    return data, truth


def gen_tripadvisor(spec: DgpSpec):
    """Low-compliance randomized-instrument family (true average effect 0.25)."""
    if spec.family != "tripadvisor":
        raise ValidationError("spec.family must be 'tripadvisor'")
    return _gen_binary_family(spec)


def gen_coverage(spec: DgpSpec):
    """Stronger-compliance family used in the coverage experiments (ATE 6.8)."""
    if spec.family != "coverage":
        raise ValidationError("spec.family must be 'coverage'")
    return _gen_binary_family(spec)


def _nlsym_covariates(rng, n):
    """22 mostly binary schooling-style covariates.

    Column 4 is a continuous ability/education proxy N(10.38, sd=3) clipped
    to [0, 20.76]; column 7 is a rare binary indicator Bern(0.1); the rest
    are balanced binaries.
    """
    X = rng.binomial(1, 0.5, size=(n, 22)).astype(np.float64)
    X[:, 4] = np.clip(rng.normal(10.38, 3.0, size=n), 0.0, 20.76)
    X[:, 7] = rng.binomial(1, 0.1, size=n).astype(np.float64)
    names = [f"x{j}" for j in range(22)]
    names[4] = "mother_educ"
    names[7] = "black"
    return X, names


def gen_nlsym_semi(spec: DgpSpec, X=None, Z=None):
    """Schooling-style semi-synthetic family on given or surrogate covariates.

    The treatment is continuous, T = c0*X[4]*Z + X[4] + nu with a dataset-
    level constant c0 ~ U[0.2, 0.3]; the instrument is binary with rate 0.68.
    """
    if spec.family != "nlsym":
        raise ValidationError("spec.family must be 'nlsym'")
    rng = np.random.default_rng(spec.seed)
    if X is not None:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] < 8:
            raise SchemaError(
                "nlsym covariates must include columns 4 and 7 "
                f"(got {X.shape[1]} columns)"
            )
        n = X.shape[0]
        names = [f"x{j}" for j in range(X.shape[1])]
    else:
        n = spec.n
        X, names = _nlsym_covariates(rng, n)
    if Z is None:
        Z = rng.binomial(1, 0.68, size=n).astype(np.float64)
    else:
        Z = np.asarray(Z, dtype=np.float64).ravel()
        if Z.shape[0] != n:
            raise ValidationError("Z length does not match covariates")

    coefs = spec.theta_coefs if spec.theta_coefs is not None else (
        0.1, 0.05, -0.1
    )

    def theta_fn(Xm):
        Xm = np.atleast_2d(np.asarray(Xm, dtype=np.float64))
        return coefs[0] + coefs[1] * Xm[:, 4] + coefs[2] * Xm[:, 7]

    c0 = rng.uniform(0.2, 0.3)
    nu = rng.uniform(0.0, 1.0, size=n)
    T = c0 * X[:, 4] * Z + X[:, 4] + nu
    eps = rng.normal(0.0, np.sqrt(0.1), size=n)
    theta = theta_fn(X)
    Y = theta * (T + nu) + 0.05 * X[:, 4] + eps

    data = IvDataset(X=X, T=T, Z=Z, Y=Y, column_names=names,
                     binary_treatment=False, binary_instrument=True)
    true_ate = coefs[0] + coefs[1] * 10.38 + coefs[2] * 0.1
    truth = GroundTruth(theta_fn=theta_fn, true_ate=float(true_ate),
                        precision=1e-3, info={"c0": float(c0)})
    return data, truth


def generate(spec: DgpSpec):
    """Dispatch to the family generator."""
    if spec.family == "tripadvisor":
        return gen_tripadvisor(spec)
    if spec.family == "coverage":
        return gen_coverage(spec)
    return gen_nlsym_semi(spec)


@dataclass
class DgpOracle:
    """Exact nuisance values of a binary family evaluated on a sample X."""

    theta0: np.ndarray
    h1: np.ndarray   # E[T | Z=1, X]
    h0: np.ndarray   # E[T | Z=0, X]
    p0: np.ndarray   # E[T | X]
    r0: float        # E[Z]
    beta0: np.ndarray
    v0: np.ndarray
    f0: np.ndarray   # E[T*Z | X]
    q0: np.ndarray   # E[Y | X]

    def h(self, z: int) -> np.ndarray:
        return self.h1 if z == 1 else self.h0

    def ey_given_z(self, z: int) -> np.ndarray:
        """E[Y | Z=z, X] - q0(X) in a cancellation-free form."""
        return self.theta0 * (self.h(z) - self.p0)


def oracle_for(spec: DgpSpec, X) -> DgpOracle:
    """Closed-form nuisances of the tripadvisor/coverage families."""
    if spec.family not in _FAMILY_DEFAULTS:
        raise ValidationError(
            f"no closed-form oracle for family {spec.family!r}"
        )
    coefs_d, (a, b), endo_d, scale, base, xcoef, noise = _FAMILY_DEFAULTS[
        spec.family
    ]
    coefs = spec.theta_coefs if spec.theta_coefs is not None else coefs_d
    endo = (spec.endogeneity_coef if spec.endogeneity_coef is not None
            else endo_d)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    theta0 = coefs[0] + coefs[1] * X[:, a] + coefs[2] * X[:, b]
    h1 = _mean_complier_prob(X[:, 0], scale)
    h0 = np.full(X.shape[0], base)
    p0 = (h1 + h0) / 2.0
    gap = h1 - h0
    q0 = theta0 * (p0 + endo * 5.0) + xcoef * X[:, 0] + noise * 0.5
    return DgpOracle(
        theta0=theta0, h1=h1, h0=h0, p0=p0, r0=0.5,
        beta0=gap / 4.0, v0=gap**2 / 4.0, f0=h1 / 2.0, q0=q0,
    )
