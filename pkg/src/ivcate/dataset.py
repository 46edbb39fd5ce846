"""Ingestion, validation, normalization and fold splitting for IV data.

The observed sample is (X, T, Z, Y): features, treatment, instrument and
outcome. All downstream estimators consume the :class:`IvDataset` container
produced here.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from .exceptions import ParseError, SchemaError, ValidationError

__all__ = [
    "IvDataset",
    "SplitPlan",
    "CsvSchema",
    "load_csv",
    "quantile_normalize",
    "make_splits",
]


@dataclass
class IvDataset:
    """A validated observational/experimental IV sample.

    X is an (n, d) feature matrix, T/Z/Y are length-n vectors. When
    ``binary_treatment`` / ``binary_instrument`` is set the corresponding
    vector must contain only 0s and 1s.
    """

    X: np.ndarray
    T: np.ndarray
    Z: np.ndarray
    Y: np.ndarray
    column_names: Sequence[str] = field(default_factory=list)
    binary_treatment: bool = False
    binary_instrument: bool = False

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        if self.X.ndim != 2:
            raise ValidationError("X must be a 2-d matrix")
        self.T = np.asarray(self.T, dtype=np.float64).ravel()
        self.Z = np.asarray(self.Z, dtype=np.float64).ravel()
        self.Y = np.asarray(self.Y, dtype=np.float64).ravel()
        n = self.X.shape[0]
        if n < 4:
            raise ValidationError(f"need at least 4 rows, got {n}")
        for name, v in (("T", self.T), ("Z", self.Z), ("Y", self.Y)):
            if v.shape[0] != n:
                raise ValidationError(
                    f"{name} has {v.shape[0]} rows, X has {n}"
                )
            if not np.all(np.isfinite(v)):
                bad = int(np.flatnonzero(~np.isfinite(v))[0])
                raise ParseError(f"non-finite value in {name} at row {bad}")
        if not np.all(np.isfinite(self.X)):
            bad = int(np.flatnonzero(~np.isfinite(self.X).all(axis=1))[0])
            raise ParseError(f"non-finite value in X at row {bad}")
        if not self.column_names:
            self.column_names = [f"x{j}" for j in range(self.X.shape[1])]
        self.column_names = list(self.column_names)
        if len(self.column_names) != self.X.shape[1]:
            raise ValidationError("column_names length does not match X")
        if self.binary_treatment:
            _check_binary(self.T, "T")
        if self.binary_instrument:
            _check_binary(self.Z, "Z")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def to_csv(self, path, outcome="y", treatment="t", instrument="z"):
        """Write the dataset to CSV (lossless for finite doubles)."""
        df = pd.DataFrame(self.X, columns=self.column_names)
        df.insert(0, instrument, self.Z)
        df.insert(0, treatment, self.T)
        df.insert(0, outcome, self.Y)
        # repr of a Python float is shortest-exact, so the write is lossless.
        df.to_csv(path, index=False, float_format=lambda v: repr(float(v)))

    def with_features(self, X, column_names=None) -> "IvDataset":
        """Copy of this dataset with a replacement feature matrix."""
        return IvDataset(
            X=X,
            T=self.T,
            Z=self.Z,
            Y=self.Y,
            column_names=column_names or [],
            binary_treatment=self.binary_treatment,
            binary_instrument=self.binary_instrument,
        )


def _check_binary(v: np.ndarray, name: str):
    bad = np.flatnonzero((v != 0.0) & (v != 1.0))
    if bad.size:
        raise ValidationError(
            f"{name} flagged binary but row {int(bad[0])} has value {v[bad[0]]}"
        )


@dataclass(frozen=True)
class SplitPlan:
    """Deterministic assignment of rows to K cross-fitting folds."""

    fold_assignment: np.ndarray
    seed: int
    K: int

    def __post_init__(self):
        a = np.asarray(self.fold_assignment, dtype=np.intp)
        object.__setattr__(self, "fold_assignment", a)
        if self.K < 2:
            raise ValueError(f"K must be >= 2, got {self.K}")
        counts = np.bincount(a, minlength=self.K)
        if counts.size != self.K or counts.min() == 0:
            raise ValueError("every fold must be nonempty")

    @property
    def n(self) -> int:
        return self.fold_assignment.shape[0]

    def train_test(self, k: int):
        """Row indices (train, test) for fold k."""
        mask = self.fold_assignment == k
        idx = np.arange(self.n)
        return idx[~mask], idx[mask]


def make_splits(n: int, K: int = 2, seed: int = 0) -> SplitPlan:
    """Partition {0..n-1} into K balanced folds, reproducibly.

    Fold sizes differ by at most one; the assignment is a pure function of
    (seed, n, K).
    """
    if K < 2:
        raise ValueError(f"K must be >= 2, got {K}")
    if n < K:
        raise ValueError(f"cannot split n={n} rows into K={K} folds")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    assignment = np.empty(n, dtype=np.intp)
    assignment[perm] = np.arange(n) % K
    return SplitPlan(fold_assignment=assignment, seed=seed, K=K)


def quantile_normalize(X: np.ndarray, q: int = 1000) -> np.ndarray:
    """Map each column monotonically into [0, 1] by empirical quantile rank.

    Ranks are discretized to q levels; constant columns map to 0. The map is
    monotone per column and idempotent up to the q-level discretization.
    """
    if q < 2:
        raise ValueError(f"q must be >= 2, got {q}")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = X.shape[0]
    out = np.empty_like(X)
    for j in range(X.shape[1]):
        col = X[:, j]
        if not np.any(np.isfinite(col)):
            raise ValueError(f"column {j} has no finite values")
        if col.max() == col.min():
            out[:, j] = 0.0
            continue
        u = (rankdata(col, method="average") - 1.0) / (n - 1.0)
        out[:, j] = np.rint(u * (q - 1)) / (q - 1)
    return out


@dataclass
class CsvSchema:
    """Column roles for CSV ingestion.

    ``categorical`` maps a column name to the baseline level that is dropped
    when one-hot encoding. ``features`` defaults to every non-role column.
    """

    outcome: str
    treatment: str
    instrument: str
    features: Sequence[str] | None = None
    categorical: Mapping[str, str] = field(default_factory=dict)
    binary: bool = False


def load_csv(path, schema: CsvSchema) -> IvDataset:
    """Read a CSV with a header row into a validated IvDataset.

    Categorical feature columns are one-hot encoded with the declared
    baseline level dropped.
    """
    df = pd.read_csv(path, float_precision="round_trip")
    roles = [schema.outcome, schema.treatment, schema.instrument]
    for col in roles:
        if col not in df.columns:
            raise SchemaError(f"missing required column {col!r}")
    feature_cols = list(schema.features) if schema.features is not None else [
        c for c in df.columns if c not in roles
    ]
    if not feature_cols:
        raise SchemaError("schema names no feature columns")
    for col in feature_cols:
        if col not in df.columns:
            raise SchemaError(f"missing feature column {col!r}")

    def numeric(col):
        vals = pd.to_numeric(df[col], errors="coerce").to_numpy(dtype=np.float64)
        bad = np.flatnonzero(~np.isfinite(vals))
        if bad.size:
            raise ParseError(
                f"column {col!r} has a non-numeric or non-finite value at row "
                f"{int(bad[0])}"
            )
        return vals

    blocks, names = [], []
    for col in feature_cols:
        if col in schema.categorical:
            baseline = schema.categorical[col]
            levels = sorted(df[col].astype(str).unique())
            if str(baseline) not in levels:
                raise SchemaError(
                    f"baseline level {baseline!r} not present in column {col!r}"
                )
            for lvl in levels:
                if lvl == str(baseline):
                    continue
                blocks.append((df[col].astype(str) == lvl).to_numpy(np.float64))
                names.append(f"{col}={lvl}")
        else:
            blocks.append(numeric(col))
            names.append(col)
    X = np.column_stack(blocks)
    return IvDataset(
        X=X,
        T=numeric(schema.treatment),
        Z=numeric(schema.instrument),
        Y=numeric(schema.outcome),
        column_names=names,
        binary_treatment=schema.binary,
        binary_instrument=schema.binary,
    )
