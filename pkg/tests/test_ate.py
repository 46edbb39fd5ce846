import numpy as np
import pytest

from ivcate.ate import (
    RELEVANCE_THRESHOLD,
    EstimateWithCI,
    estimate_dmlateiv,
    estimate_dr_ate,
    weighted_mean_ci,
)
from ivcate.crossfit import Residuals
from ivcate.exceptions import ValidationError, WeakInstrumentError


def _res(y, t, z):
    y = np.asarray(y, float)
    return Residuals(y_res=y, t_res=np.asarray(t, float),
                     z_res=np.asarray(z, float),
                     z_pi_res=np.zeros_like(y))


class TestEstimateWithCI:
    def test_level_validation(self):
        with pytest.raises(ValidationError):
            EstimateWithCI(0.0, 1.0, -1.0, 1.0, level=1.5, n_used=10)

    def test_negative_stderr(self):
        with pytest.raises(ValidationError):
            EstimateWithCI(0.0, -1.0, -1.0, 1.0, level=0.95, n_used=10)

    def test_covers_and_width(self):
        e = EstimateWithCI(0.0, 1.0, -1.0, 2.0, level=0.95, n_used=10)
        assert e.covers(0.0) and e.covers(-1.0) and not e.covers(2.5)
        assert e.width == 3.0


class TestDmlAteIv:
    def test_noiseless_recovers_theta_exactly(self):
        rng = np.random.default_rng(0)
        t = rng.standard_normal(50)
        z = t + 0.1 * rng.standard_normal(50)
        est = estimate_dmlateiv(_res(3.5 * t, t, z))
        assert est.point == pytest.approx(3.5, abs=1e-12)
        assert est.stderr == pytest.approx(0.0, abs=1e-12)

    def test_matches_hand_computed_ratio(self):
        y = [1.0, -2.0, 0.5, 3.0, -1.0]
        t = [0.5, -1.0, 0.2, 1.5, -0.3]
        z = [1.0, -0.5, 0.1, 0.8, -0.9]
        num = sum(a * b for a, b in zip(y, z))
        den = sum(a * b for a, b in zip(t, z))
        est = estimate_dmlateiv(_res(y, t, z))
        assert est.point == pytest.approx(num / den, rel=1e-14)

    def test_weak_instrument_raises(self):
        t = [1.0, -1.0, 1.0, -1.0]
        z = [1.0, 1.0, -1.0, -1.0]  # exactly orthogonal to t
        with pytest.raises(WeakInstrumentError, match="relevance"):
            estimate_dmlateiv(_res([1.0, 2.0, 3.0, 4.0], t, z))
        assert RELEVANCE_THRESHOLD == 1e-10

    def test_degenerate_unit_iv_is_sample_mean(self):
        rng = np.random.default_rng(1)
        y = rng.standard_normal(200)
        est = estimate_dmlateiv(_res(y, np.ones(200), np.ones(200)))
        assert est.point == pytest.approx(y.mean(), rel=1e-14)
        assert est.stderr == pytest.approx(y.std(ddof=1) / np.sqrt(200),
                                           rel=1e-12)

    def test_two_group_inconsistency_limit(self):
        # Heterogeneous effects: the estimand is the compliance-weighted
        # average sum(theta_g * pc_g) / sum(pc_g), not the plain ATE.
        rng = np.random.default_rng(2)
        n = 400000
        g = (rng.random(n) < 0.5).astype(float)
        theta = np.where(g == 1.0, 5.0, 1.0)
        pc = np.where(g == 1.0, 0.8, 0.2)
        Z = (rng.random(n) < 0.5).astype(float)
        base = 0.1
        pT = base + pc * Z
        T = (rng.random(n) < pT).astype(float)
        Y = theta * T + 0.1 * rng.standard_normal(n)
        # Oracle residualization within groups.
        p0 = base + pc * 0.5
        q0 = theta * p0
        est = estimate_dmlateiv(_res(Y - q0, T - p0, Z - 0.5))
        limit = (5.0 * 0.8 + 1.0 * 0.2) / (0.8 + 0.2)
        ate = 3.0
        assert est.point == pytest.approx(limit, abs=0.05)
        assert abs(est.point - ate) > 1.0

    def test_ci_coverage_simulation(self):
        rng = np.random.default_rng(3)
        hits = 0
        R = 300
        for _ in range(R):
            z = rng.standard_normal(200)
            t = z + 0.5 * rng.standard_normal(200)
            y = 2.0 * t + rng.standard_normal(200)
            est = estimate_dmlateiv(_res(y, t, z), level=0.9)
            hits += est.covers(2.0)
        assert 0.85 <= hits / R <= 0.95


class TestDrAte:
    def test_constant_vector(self):
        est = estimate_dr_ate(np.full(10, 4.2))
        assert est.point == pytest.approx(4.2)
        assert est.stderr == pytest.approx(0.0, abs=1e-14)

    def test_mean_and_stderr(self):
        rng = np.random.default_rng(4)
        v = rng.standard_normal(500) + 1.0
        est = estimate_dr_ate(v, level=0.9)
        assert est.point == pytest.approx(v.mean(), rel=1e-14)
        assert est.stderr == pytest.approx(v.std(ddof=1) / np.sqrt(500),
                                           rel=1e-12)
        assert est.level == 0.9 and est.n_used == 500

    def test_non_finite_rejected(self):
        with pytest.raises(ValidationError):
            estimate_dr_ate(np.array([1.0, np.inf, 2.0]))


class TestWeightedMean:
    def test_uniform_weights_match_dr_ate(self):
        rng = np.random.default_rng(5)
        v = rng.standard_normal(300)
        a = weighted_mean_ci(v, np.full(300, 2.0))
        b = estimate_dr_ate(v)
        assert a.point == pytest.approx(b.point, rel=1e-14)
        assert a.stderr == pytest.approx(b.stderr, rel=1e-12)

    def test_point_is_np_average(self):
        rng = np.random.default_rng(6)
        v = rng.standard_normal(100)
        w = rng.random(100)
        est = weighted_mean_ci(v, w)
        assert est.point == pytest.approx(np.average(v, weights=w), rel=1e-14)

    def test_zero_weights_rejected(self):
        with pytest.raises(ValidationError):
            weighted_mean_ci(np.ones(5), np.zeros(5))
