import numpy as np
import pandas as pd
import pytest

from ivcate.crossfit import (
    NuisanceLearners,
    NuisanceSet,
    compliance_delta,
    compute_residuals,
    fit_nuisances,
    h_marginal_p,
)
from ivcate.dataset import IvDataset, make_splits
from ivcate.exceptions import ValidationError
from ivcate.learners import LearnerSpec, fit_regressor


def _binary_data(n=400, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 2))
    Z = (rng.random(n) < 0.5).astype(float)
    pT = np.clip(0.3 + 0.3 * Z + 0.05 * X[:, 0], 0.05, 0.95)
    T = (rng.random(n) < pT).astype(float)
    Y = 2.0 * T + X[:, 0] + rng.standard_normal(n)
    return IvDataset(X=X, T=T, Z=Z, Y=Y, binary_treatment=True,
                     binary_instrument=True)


class TestResolve:
    def test_classifier_spec_coerced_for_continuous_treatment(self):
        data = IvDataset(X=np.random.default_rng(0).standard_normal((10, 1)),
                         T=np.arange(10.0), Z=np.arange(10.0),
                         Y=np.arange(10.0))
        out = NuisanceLearners.linear().resolve(data)
        assert not out["h"].is_classifier and not out["p"].is_classifier
        assert out["h"] == out["q"]

    def test_classifier_kept_for_binary_treatment(self):
        data = _binary_data()
        out = NuisanceLearners.linear().resolve(data)
        assert out["h"].is_classifier and out["r"].is_classifier

    def test_missing_specs_fall_back(self):
        spec = NuisanceLearners(q=LearnerSpec.make("ridge"))
        out = spec.resolve(_binary_data())
        assert out["h"].kind == "logistic_l2"
        assert out["v"] == spec.q


class TestFitNuisances:
    def test_binary_identities(self, coverage_data):
        nuis = coverage_data["nuis"]
        data = coverage_data["data"]
        res = coverage_data["res"]
        # With r = 1/2: beta = (2Z-1)*Delta/2, V = 4*beta^2, and the
        # projected instrument residual equals the compliance score.
        np.testing.assert_allclose(nuis.rhat, 0.5)
        np.testing.assert_allclose(
            nuis.beta, (2.0 * data.Z - 1.0) * nuis.delta / 2.0, atol=1e-14)
        np.testing.assert_allclose(nuis.v, 4.0 * nuis.beta**2, atol=1e-14)
        np.testing.assert_allclose(res.z_pi_res, nuis.delta, atol=1e-14)
        np.testing.assert_allclose(res.z_res, data.Z - 0.5, atol=0)

    def test_out_of_fold_honesty(self):
        # Mean-only learner: the prediction on a fold must be (close to)
        # the mean of the *other* fold's labels.
        rng = np.random.default_rng(1)
        n = 100
        X = rng.standard_normal((n, 1))
        data = IvDataset(X=X, T=rng.standard_normal(n),
                         Z=rng.standard_normal(n), Y=np.zeros(n))
        plan = make_splits(n, 2, seed=0)
        _, f0 = plan.train_test(0)
        _, f1 = plan.train_test(1)
        Y = np.zeros(n)
        Y[f1] = 1.0
        data = IvDataset(X=X, T=data.T, Z=data.Z, Y=Y)
        mean_only = LearnerSpec.make("ridge", alpha=1e12)
        specs = NuisanceLearners(q=mean_only)
        nuis = fit_nuisances(data, specs, plan)
        np.testing.assert_allclose(nuis.qhat[f0], 1.0, atol=1e-6)
        np.testing.assert_allclose(nuis.qhat[f1], 0.0, atol=1e-6)

    def test_fixed_r_validation(self):
        data = _binary_data()
        plan = make_splits(data.n, 2)
        with pytest.raises(ValidationError):
            fit_nuisances(data, NuisanceLearners.linear(), plan, fixed_r=1.5)

    def test_plan_mismatch(self):
        data = _binary_data()
        plan = make_splits(data.n + 1, 2)
        with pytest.raises(ValidationError):
            fit_nuisances(data, NuisanceLearners.linear(), plan)

    def test_empty_instrument_arm(self):
        rng = np.random.default_rng(2)
        n = 8
        Z = np.zeros(n)
        Z[0] = 1.0  # the lone Z=1 row leaves one training set without arm 1
        Z[1:] = 0.0
        data = IvDataset(X=rng.standard_normal((n, 1)),
                         T=(rng.random(n) < 0.5).astype(float), Z=Z,
                         Y=rng.standard_normal(n),
                         binary_treatment=True, binary_instrument=True)
        with pytest.raises(ValidationError, match="arm"):
            fit_nuisances(data, NuisanceLearners.linear(),
                          make_splits(n, 2, seed=0), fixed_r=0.5)

    def test_generic_path_beta_definition(self):
        # Continuous instrument: beta must equal fhat - phat * rhat exactly.
        rng = np.random.default_rng(3)
        n = 500
        X = rng.standard_normal((n, 2))
        Z = rng.standard_normal(n)
        T = 0.5 * Z + X[:, 0] + 0.1 * rng.standard_normal(n)
        Y = 2.0 * T + rng.standard_normal(n)
        data = IvDataset(X=X, T=T, Z=Z, Y=Y)
        nuis = fit_nuisances(data, NuisanceLearners.linear(),
                             make_splits(n, 2, seed=0))
        np.testing.assert_array_equal(nuis.beta,
                                      nuis.fhat - nuis.phat * nuis.rhat)
        assert np.all(nuis.v >= 0)

    def test_nuisance_error_is_named(self):
        # Force the q regression to fail (singular OLS design) and check
        # the nuisance name appears in the error.
        n = 40
        X = np.column_stack([np.ones(n), np.ones(n)])
        rng = np.random.default_rng(4)
        data = IvDataset(X=X, T=rng.standard_normal(n),
                         Z=rng.standard_normal(n), Y=rng.standard_normal(n))
        specs = NuisanceLearners(q=LearnerSpec.make("ols"))
        from ivcate.exceptions import NumericalError
        with pytest.raises(NumericalError, match="'q'"):
            fit_nuisances(data, specs, make_splits(n, 2, seed=0))


class TestNuisanceSet:
    def test_length_check(self):
        a = np.zeros(5)
        with pytest.raises(ValidationError):
            NuisanceSet(qhat=a, phat=a, rhat=a, hhat=a, fhat=np.zeros(4),
                        beta=a, v=a)

    def test_v_clipped_nonnegative(self):
        a = np.zeros(5)
        ns = NuisanceSet(qhat=a, phat=a, rhat=a, hhat=a, fhat=a, beta=a,
                         v=np.array([-1.0, 0.0, 1.0, 2.0, -0.5]))
        assert ns.v.min() == 0.0

    def test_to_csv(self, tmp_path):
        a = np.arange(5.0)
        ns = NuisanceSet(qhat=a, phat=a, rhat=a, hhat=a, fhat=a, beta=a, v=a,
                         delta=a)
        p = tmp_path / "n.csv"
        ns.to_csv(p)
        df = pd.read_csv(p)
        assert list(df.columns) == ["qhat", "phat", "rhat", "hhat", "fhat",
                                    "beta", "v", "delta"]


class TestDerivedQuantities:
    def test_compliance_delta_and_marginal_p_linear(self):
        rng = np.random.default_rng(5)
        n = 200
        X = rng.standard_normal((n, 1))
        Z = (rng.random(n) < 0.5).astype(float)
        T = 2.0 * Z + 3.0 * X[:, 0]
        data = IvDataset(X=X, T=T, Z=Z, Y=rng.standard_normal(n),
                         binary_instrument=True)
        h_model = fit_regressor(LearnerSpec.make("ols"),
                                np.column_stack([Z, X]), T)
        np.testing.assert_allclose(compliance_delta(h_model, data),
                                   (2.0 * Z - 1.0) * 1.0, atol=1e-8)
        np.testing.assert_allclose(h_marginal_p(h_model, data),
                                   3.0 * X[:, 0] + 1.0, atol=1e-8)

    def test_requires_binary_instrument(self):
        rng = np.random.default_rng(6)
        data = IvDataset(X=rng.standard_normal((10, 1)),
                         T=rng.standard_normal(10),
                         Z=rng.standard_normal(10),
                         Y=rng.standard_normal(10))
        h_model = fit_regressor(LearnerSpec.make("ols"),
                                np.column_stack([data.Z, data.X]), data.T)
        with pytest.raises(ValidationError):
            compliance_delta(h_model, data)
        with pytest.raises(ValidationError):
            h_marginal_p(h_model, data)

    def test_residual_alignment_check(self, coverage_data):
        nuis = coverage_data["nuis"]
        small = _binary_data(n=50)
        with pytest.raises(ValidationError):
            compute_residuals(small, nuis)
