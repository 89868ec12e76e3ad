"""Tests for view sampling, the learning-rate schedule, and momentum."""

import numpy as np
import pytest

from refrec.optim import (NonFiniteGradient, OptimizerState, StageSchedule,
                          TooFewViews, lr_at, nesterov_step, sample_views)


class TestSampleViews:
    def test_silhouette_views_step_eight_of_72(self, rng):
        refr, sil = sample_views(rng, 72)
        assert 0 <= refr < 72
        assert len(sil) == 9
        diffs = {(sil[k + 1] - sil[k]) % 72 for k in range(8)}
        assert diffs == {8}

    def test_nine_views_uses_all(self, rng):
        _, sil = sample_views(rng, 9)
        assert sorted(sil) == list(range(9))

    def test_views_distinct(self, rng):
        for n in (9, 10, 11, 13, 36, 100):
            for _ in range(20):
                _, sil = sample_views(rng, n)
                assert len(set(sil)) == 9

    def test_refraction_view_uniform(self):
        rng = np.random.default_rng(123)
        n = 36
        draws = 10000
        counts = np.zeros(n)
        for _ in range(draws):
            refr, _ = sample_views(rng, n)
            counts[refr] += 1
        p = 1.0 / n
        sigma = np.sqrt(draws * p * (1 - p))
        assert np.all(np.abs(counts - draws * p) < 3.5 * sigma)

    def test_too_few_views(self, rng):
        with pytest.raises(TooFewViews):
            sample_views(rng, 8)


class TestLearningRate:
    def test_endpoints_and_midpoint(self):
        s = StageSchedule(n_stages=4, iters_per_stage=100,
                          lr_start=0.005, lr_end=0.002)
        diag = 10.0
        assert lr_at(s, 0, 0, diag) == pytest.approx(0.05)
        assert lr_at(s, 3, 99, diag) == pytest.approx(0.02)
        mid = lr_at(s, 1, 99, diag)  # k = 199 of 399: fraction 199/399
        want = (0.005 + 199 / 399 * (0.002 - 0.005)) * diag
        assert mid == pytest.approx(want)

    def test_monotone_decay(self):
        s = StageSchedule(n_stages=2, iters_per_stage=50)
        vals = [lr_at(s, st, it, 1.0) for st in range(2) for it in range(50)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_single_iteration_schedule(self):
        s = StageSchedule(n_stages=1, iters_per_stage=1)
        assert lr_at(s, 0, 0, 2.0) == pytest.approx(0.01)

    def test_schedule_validation(self):
        with pytest.raises(ValueError):
            StageSchedule(n_stages=0)
        with pytest.raises(ValueError):
            StageSchedule(lr_start=0.001, lr_end=0.002)
        with pytest.raises(ValueError):
            StageSchedule(lr_end=0.0)


class TestNesterovStep:
    def test_zero_momentum_is_plain_descent(self):
        x = np.array([[1.0, 2.0, 3.0]])
        g = np.array([[0.5, -1.0, 0.0]])
        st = OptimizerState(np.zeros_like(x))
        nesterov_step(st, x, g, lr=0.1, momentum=0.0)
        np.testing.assert_allclose(x, [[0.95, 2.1, 3.0]])
        assert st.iteration == 1

    def test_velocity_accumulates(self):
        x = np.zeros((1, 3))
        g = np.ones((1, 3))
        st = OptimizerState(np.zeros_like(x))
        nesterov_step(st, x, g, lr=1.0, momentum=0.8)
        np.testing.assert_allclose(st.velocity, -np.ones((1, 3)))
        nesterov_step(st, x, g, lr=1.0, momentum=0.8)
        np.testing.assert_allclose(st.velocity, -1.8 * np.ones((1, 3)))
        np.testing.assert_allclose(x, -2.8 * np.ones((1, 3)))

    def test_converges_on_quadratic(self):
        """Momentum descent on f(x) = 0.5 ||x - c||^2 reaches c."""
        c = np.array([[0.3, -0.7, 1.1]])
        x = np.zeros((1, 3))
        st = OptimizerState(np.zeros_like(x))
        for _ in range(300):
            nesterov_step(st, x, x - c, lr=0.1, momentum=0.9)
        assert np.abs(x - c).max() < 1e-6

    def test_zero_gradient_fixed_point(self):
        x = np.array([[1.0, 1.0, 1.0]])
        st = OptimizerState(np.zeros_like(x))
        for _ in range(5):
            nesterov_step(st, x, np.zeros_like(x), lr=0.5, momentum=0.9)
        np.testing.assert_array_equal(x, [[1.0, 1.0, 1.0]])

    def test_nonfinite_gradient_raises(self):
        x = np.zeros((1, 3))
        st = OptimizerState(np.zeros_like(x))
        g = np.array([[np.nan, 0.0, 0.0]])
        with pytest.raises(NonFiniteGradient):
            nesterov_step(st, x, g, lr=0.1)
