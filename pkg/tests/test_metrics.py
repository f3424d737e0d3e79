import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import kstest, norm, poisson

import zipboost as zb
from zipboost.errors import MetricError
from zipboost.metrics import (loglik_poisson, loglik_zip, mean_deviance,
                              pseudo_r2, qq_table, rqr, unit_deviance, vuong,
                              zip_pmf)


class TestUnitDeviance:
    def test_zero_count_poisson_collapses(self):
        for mu in (0.2, 1.0, 7.0):
            assert unit_deviance(0, mu, 0.0) == pytest.approx(2.0 * mu, abs=1e-12)

    def test_saturated_fit_is_zero(self):
        assert unit_deviance(1, 1.0, 0.0) == pytest.approx(0.0, abs=1e-12)

    def test_hand_computed_zip_value(self):
        # 2*(2 ln 2 - 2 - ln(1/2) - 2 ln 1 + 1) = 6 ln 2 - 2
        assert unit_deviance(2, 1.0, 0.5) == pytest.approx(6 * np.log(2) - 2, abs=1e-12)

    def test_certain_inflation_with_claims_is_infinite(self):
        with pytest.warns(UserWarning, match="infinite unit deviance"):
            d = unit_deviance(2, 1.0, 1.0)
        assert np.isinf(d)

    def test_nonnegative(self, rng):
        y = rng.poisson(1.0, 500)
        mu = rng.uniform(0.05, 5.0, 500)
        p = rng.uniform(0.0, 0.9, 500)
        assert np.all(unit_deviance(y, mu, p) >= -1e-12)

    def test_mean_is_mean_of_units(self, rng):
        y = rng.poisson(1.0, 100)
        mu = rng.uniform(0.1, 3.0, 100)
        assert mean_deviance(y, mu, 0.0) == pytest.approx(
            float(np.mean(unit_deviance(y, mu, 0.0))))


class TestPseudoR2:
    def test_model_equal_null_scores_zero(self):
        assert pseudo_r2(1.7, 1.7) == 0.0

    def test_zero_null_deviance_is_an_error(self):
        with pytest.raises(MetricError):
            pseudo_r2(0.0, 0.0)

    def test_ordering_matches_deviance(self):
        d_null = 2.0
        devs = [1.5, 1.0, 0.5]
        r2s = [pseudo_r2(d, d_null) for d in devs]
        assert r2s == sorted(r2s)
        assert all(r2 <= 1.0 for r2 in r2s)


class TestVuong:
    def test_hand_computed_example(self):
        ll2 = np.zeros(4)
        ll1 = np.asarray([0.5, -0.5, 1.0, 0.0])
        result = vuong(ll1, ll2)
        # mean 0.25, population sd sqrt(0.3125)
        assert result.V == pytest.approx(2 * 0.25 / np.sqrt(0.3125), abs=1e-12)
        assert result.V == pytest.approx(0.8944271909999159, abs=1e-12)
        assert result.preferred == "inconclusive"

    def test_antisymmetry(self, rng):
        ll1 = rng.normal(size=200)
        ll2 = rng.normal(size=200)
        assert vuong(ll1, ll2).V == -vuong(ll2, ll1).V

    def test_identical_models_error(self):
        ll = np.asarray([0.1, 0.2, 0.3])
        with pytest.raises(MetricError, match="indistinguishable"):
            vuong(ll, ll.copy())

    def test_misaligned_vectors_error(self):
        with pytest.raises(MetricError):
            vuong(np.zeros(3), np.zeros(4))

    def test_decision_thresholds(self):
        n = 10000
        base = np.zeros(n)
        shift = np.concatenate([np.full(n // 2, 0.1), np.full(n - n // 2, -0.04)])
        result = vuong(base + shift, base)
        expected = np.sqrt(n) * shift.mean() / shift.std()
        assert result.V == pytest.approx(expected)
        assert result.preferred == ("first" if expected > 1.96 else "inconclusive")
        flipped = vuong(base, base + shift)
        if expected > 1.96:
            assert flipped.preferred == "second"

    def test_p_value_two_sided(self):
        ll1 = np.asarray([0.5, -0.5, 1.0, 0.0])
        result = vuong(ll1, np.zeros(4))
        assert result.p_value == pytest.approx(2 * norm.sf(abs(result.V)), abs=1e-15)


class TestLogLik:
    def test_poisson_matches_scipy(self, rng):
        y = rng.poisson(2.0, 50)
        mu = rng.uniform(0.2, 4.0, 50)
        np.testing.assert_allclose(loglik_poisson(y, mu), poisson.logpmf(y, mu),
                                   rtol=1e-12)

    def test_zip_sums_to_pmf(self):
        ys = np.arange(0, 150)
        for mu, p in [(1.0, 0.4), (5.0, 0.1)]:
            total = np.exp(loglik_zip(ys, mu, p)).sum()
            assert total == pytest.approx(1.0, abs=1e-10)

    def test_clamping_keeps_values_finite(self):
        assert np.isfinite(loglik_zip(0, 50.0, 0.0))
        assert np.isfinite(loglik_zip(3, 1.0, 1.0))


class TestRqr:
    def test_tiny_mean_residual_is_normal_quantile_of_u(self):
        for u in (0.1, 0.5, 0.9):
            assert rqr(0, 1e-12, 0.0, u) == pytest.approx(norm.ppf(u), abs=1e-6)

    def test_zero_count_value(self):
        # q = u * exp(-mu) at y=0, p=0, so u=1 gives the normal quantile of
        # the zero-class mass
        assert rqr(0, 1.0, 0.0, 1.0) == pytest.approx(norm.ppf(np.exp(-1.0)), abs=1e-12)
        assert rqr(0, 1.0, 0.0, 1.0) == pytest.approx(-0.33747496376420244, abs=1e-12)

    @given(st.integers(0, 6), st.floats(0.05, 8.0), st.floats(0.0, 0.9))
    @settings(max_examples=60, deadline=None)
    def test_strictly_increasing_in_u(self, y, mu, p):
        us = np.linspace(0.01, 0.99, 7)
        values = rqr(np.full(7, y), np.full(7, mu), np.full(7, p), us)
        assert np.all(np.diff(values) > 0)

    def test_self_simulated_sample_is_standard_normal(self, rng):
        n = 100_000
        mu = rng.uniform(0.2, 3.0, n)
        p = zb.zip_pmf(0, mu, 0.0) * 0  # zeros, but keep shapes aligned
        p = rng.uniform(0.0, 0.8, n)
        structural = rng.uniform(size=n) < p
        y = np.where(structural, 0, rng.poisson(mu))
        res = rqr(y, mu, p, rng.uniform(size=n))
        assert kstest(res, "norm").pvalue > 0.01

    def test_misspecified_model_fails_normality(self, rng):
        n = 20_000
        mu = np.full(n, 1.0)
        y = np.where(rng.uniform(size=n) < 0.6, 0, rng.poisson(mu))
        # Poisson model with the matched conditional mean, no inflation
        res = rqr(y, np.full(n, y.mean()), np.zeros(n), rng.uniform(size=n))
        assert kstest(res, "norm").pvalue < 0.01


class TestZipPmfAndQq:
    def test_pmf_sums_to_one(self):
        ys = np.arange(0, 201)
        for mu in (0.1, 1.0, 5.0, 20.0):
            for p in (0.0, 0.3, 0.95):
                assert zip_pmf(ys, mu, p).sum() == pytest.approx(1.0, abs=1e-8)

    def test_qq_table_shape_and_sorted(self, rng):
        res = rng.normal(size=500)
        table = qq_table(res)
        assert table.shape == (500, 2)
        assert np.all(np.diff(table[:, 0]) > 0)
        assert np.all(np.diff(table[:, 1]) >= 0)


class TestEvaluate:
    def test_report_fields_and_null_consistency(self, rng):
        data, _, _ = zb.simulate(2000, "const:0.8", "none", seed=9)
        model = zb.fit(data, zb.simulation_schema(), zb.LossSpec("poisson"),
                       zb.BoostConfig(n_trees=10, learning_rate=0.2, max_depth=2))
        report = zb.evaluate(model, data)
        assert report.n == 2000
        assert report.mean_deviance >= 0
        assert report.pseudo_r2 <= 1.0
        assert report.loglik.shape == (2000,)
        doc = report.to_dict()
        assert set(doc) == {"mean_deviance", "pseudo_r2", "n", "total_loglik"}
