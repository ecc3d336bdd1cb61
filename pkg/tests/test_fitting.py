import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gmmtools import (
    Dataset,
    EmConfig,
    GaussianMixture,
    ValidationError,
    em_fit,
    log_likelihood,
    param_count,
    select_model,
    validate,
)
from gmmtools.sampling import SeededStream, sample_points

import oracles
from conftest import random_mixture


def two_clusters(n=10**4, seed=3):
    g = GaussianMixture([0.5, 0.5], [[-3.0], [3.0]], [[[1.0]], [[1.0]]])
    return sample_points(SeededStream(seed), g, n)


class TestLogLikelihood:
    def test_single_point_at_mean(self):
        g = GaussianMixture.gaussian([0.0], [[1.0]])
        assert log_likelihood(g, [[0.0]]) == pytest.approx(-0.9189385332046727, rel=1e-15)

    def test_duplicated_data_doubles(self, rng):
        g = random_mixture(rng, 2, 3)
        x = rng.normal(size=(64, 2))
        assert log_likelihood(g, np.vstack([x, x])) == pytest.approx(2 * log_likelihood(g, x), rel=1e-14)

    def test_matches_naive_product(self, rng):
        g = random_mixture(rng, 2, 3)
        x = rng.normal(size=(10, 2))
        naive = math.log(np.prod(oracles.mixture_pdf(g, x)))
        assert log_likelihood(g, x) == pytest.approx(naive, abs=1e-10)

    def test_underflow_sentinel(self, caplog):
        g = GaussianMixture.gaussian([0.0], [[1e-4]])
        assert log_likelihood(g, [[0.0], [10.0]]) == -math.inf
        assert "zero density" in caplog.text

    def test_far_but_representable_point(self):
        g = GaussianMixture.gaussian([0.0], [[1.0]])
        assert np.isfinite(log_likelihood(g, [[30.0]]))


class TestEmConfig:
    @pytest.mark.parametrize("kw", [dict(k=0), dict(k=2, max_iters=0), dict(k=2, loglik_tol=0.0),
                                    dict(k=2, covariance_floor=-1.0), dict(k=2, restarts=-1)])
    def test_invalid(self, kw):
        with pytest.raises(ValidationError):
            EmConfig(**kw)


class TestEmFit:
    def test_single_gaussian_recovery(self):
        x = sample_points(SeededStream(1), GaussianMixture.gaussian([5.0], [[2.0]]), 10**4)
        rep = em_fit(x, EmConfig(k=1))
        assert abs(rep.model.means[0, 0] - 5) < 0.05
        assert abs(rep.model.covariances[0, 0, 0] - 2) < 0.1

    def test_k1_is_sample_moments(self, rng):
        x = rng.normal(size=(500, 3)) @ rng.normal(size=(3, 3)) + 7.0
        rep = em_fit(x, EmConfig(k=1))
        np.testing.assert_allclose(rep.model.means[0], x.mean(axis=0), rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(rep.model.covariances[0], np.cov(x, rowvar=False, bias=True), rtol=1e-10, atol=1e-10)

    def test_two_cluster_recovery(self):
        rep = em_fit(two_clusters(), EmConfig(k=2, seed=1))
        order = np.argsort(rep.model.means[:, 0])
        np.testing.assert_allclose(rep.model.means[order, 0], [-3, 3], atol=0.1)
        np.testing.assert_allclose(rep.model.weights[order], [0.5, 0.5], atol=0.03)
        assert rep.converged

    def test_report_fields(self):
        x = two_clusters(2000)
        rep = em_fit(x, EmConfig(k=2, seed=4))
        p = param_count(2, 1)
        assert rep.n_params == p and rep.n_points == 2000
        assert rep.aic == pytest.approx(-2 * rep.final_loglik + 2 * p, rel=1e-15)
        assert rep.bic == pytest.approx(-2 * rep.final_loglik + p * math.log(2000), rel=1e-15)
        assert rep.final_loglik == rep.loglik_trace[-1]
        assert rep.final_loglik == pytest.approx(log_likelihood(rep.model, x), rel=1e-10)
        assert len(rep.loglik_trace) == rep.iterations_used + 1

    def test_deterministic(self):
        x = two_clusters(3000)
        a = em_fit(x, EmConfig(k=3, seed=9))
        b = em_fit(Dataset(x), EmConfig(k=3, seed=9))
        assert a == b

    def test_seed_changes_initialization(self):
        x = two_clusters(3000)
        a = em_fit(x, EmConfig(k=3, seed=1, restarts=0, max_iters=3))
        b = em_fit(x, EmConfig(k=3, seed=2, restarts=0, max_iters=3))
        assert a.model != b.model

    def test_iteration_cap(self):
        rep = em_fit(two_clusters(2000), EmConfig(k=4, max_iters=5, restarts=0))
        assert rep.iterations_used == 5 and not rep.converged

    def test_duplicate_points_are_floored(self):
        x = np.vstack([np.zeros((50, 2)), np.ones((50, 2))])
        rep = em_fit(x, EmConfig(k=2, restarts=0))
        assert rep.floored > 0
        assert np.all(np.linalg.eigvalsh(rep.model.covariances) > 0)

    def test_needs_k_points(self):
        with pytest.raises(ValidationError):
            em_fit([[0.0], [1.0]], EmConfig(k=3))

    def test_collapsing_component_keeps_trace_monotone(self, caplog):
        # a component collapses onto a few points in 3-D and has to be floored
        rng = np.random.default_rng(370)
        x = sample_points(SeededStream(370), random_mixture(rng, 3, 3), 400)
        rep = em_fit(x, EmConfig(k=4, seed=370, restarts=1, max_iters=100))
        assert np.all(np.diff(rep.loglik_trace) >= -1e-8)
        assert "EM stopped" in caplog.text and not rep.converged
        assert len(rep.loglik_trace) == rep.iterations_used + 1
        assert rep.final_loglik == pytest.approx(log_likelihood(rep.model, x), rel=1e-10)
        assert validate(rep.model) == []

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.sampled_from((1, 2, 3)))
    def test_monotone_trace(self, seed, k, d):
        rng = np.random.default_rng(seed)
        g = random_mixture(rng, d, 3)
        x = sample_points(SeededStream(seed), g, 400)
        rep = em_fit(x, EmConfig(k=k, seed=seed, restarts=1, max_iters=100))
        steps = np.diff(rep.loglik_trace)
        assert np.all(steps >= -1e-8)
        assert validate(rep.model) == []


class TestSelectModel:
    def test_single_candidate(self):
        sel = select_model(two_clusters(500), [2])
        assert sel.best_aic == sel.best_bic == 2

    def test_two_clusters_prefer_two(self):
        sel = select_model(two_clusters(2000), [1, 2, 3], EmConfig(k=1, restarts=1))
        assert sel.best_bic == 2

    def test_aic_bic_identity(self):
        n = 800
        sel = select_model(two_clusters(n), [1, 2, 3])
        for row in sel.rows:
            assert row["aic"] == pytest.approx(row["bic"] - row["n_params"] * (math.log(n) - 2), rel=1e-12)

    def test_failed_candidate_recorded(self):
        x = two_clusters(5)
        sel = select_model(x, [1, 9])
        bad = [r for r in sel.rows if r["k"] == 9][0]
        assert bad["error"] and math.isnan(bad["aic"])
        assert sel.best_bic == 1

    def test_empty_candidates(self):
        with pytest.raises(ValidationError):
            select_model(two_clusters(10), [])
