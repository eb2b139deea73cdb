import numpy as np
import pytest

from trafficpinn.optim import Adam, StepLR, clip_global_norm, latin_hypercube
from trafficpinn.streams import COLLOC, stream


class TestAdam:
    def test_zero_gradient_no_motion(self):
        a = np.array([1.0, 2.0])
        opt = Adam([a], lr=0.1)
        opt.step([np.zeros(2)])
        assert np.array_equal(a, [1.0, 2.0])

    def test_quadratic_convergence(self):
        # L = (a - 3)^2 from a = 0
        a = np.array([0.0])
        opt = Adam([a], lr=0.1)
        for _ in range(500):
            opt.step([2.0 * (a - 3.0)])
        assert abs(a[0] - 3.0) < 1e-3

    def test_first_step_magnitude(self):
        for g0 in (1e-6, 1.0, 1e6):
            a = np.array([0.0])
            opt = Adam([a], lr=0.01)
            opt.step([np.array([g0])])
            # bias correction makes the first step ~lr*sign(grad); eps
            # rounds it down slightly when |g| is near eps
            assert a[0] == pytest.approx(-0.01, rel=1e-2)

    def test_non_finite_rejected(self):
        a = np.array([0.0])
        opt = Adam([a], lr=0.1)
        with pytest.raises(ValueError):
            opt.step([np.array([np.nan])])

    def test_fresh_instance_resets_moments(self):
        a = np.array([0.0])
        opt = Adam([a], lr=0.1)
        for _ in range(10):
            opt.step([np.ones(1)])
        rebuilt = Adam([a], lr=0.1)
        assert rebuilt.t == 0
        assert np.all(rebuilt.m[0] == 0.0)


class TestStepLR:
    def test_decay_schedule(self):
        sched = StepLR(base_lr=1e-4, step_size=5000, factor=0.9)
        assert sched.lr_at(0) == 1e-4
        assert sched.lr_at(4999) == 1e-4
        assert sched.lr_at(5000) == pytest.approx(9e-5)
        assert sched.lr_at(10000) == pytest.approx(8.1e-5)


class TestClip:
    def test_large_norm_scaled_exactly(self):
        g = [np.array([6.0, 8.0])]
        scale = clip_global_norm(g, max_norm=5.0)
        assert scale == pytest.approx(0.5)
        assert np.sqrt(np.sum(g[0] ** 2)) == pytest.approx(5.0)

    def test_small_norm_untouched(self):
        g = [np.array([3.0, 0.0])]
        assert clip_global_norm(g, max_norm=5.0) == 1.0
        assert np.array_equal(g[0], [3.0, 0.0])

    def test_direction_preserved(self):
        v = np.array([1.0, 2.0, 2.0])
        g = [v.copy() * 10]
        clip_global_norm(g, max_norm=5.0)
        cos = np.dot(g[0], v) / (np.linalg.norm(g[0]) * np.linalg.norm(v))
        assert cos == pytest.approx(1.0)

    def test_extra_scalar_counts_toward_norm(self):
        g = [np.array([3.0])]
        scale = clip_global_norm(g, max_norm=5.0, extra_sq=4.0**2)
        assert scale == pytest.approx(1.0)
        scale = clip_global_norm(g, max_norm=2.5, extra_sq=4.0**2)
        assert scale == pytest.approx(0.5)


class TestLatinHypercube:
    def test_one_point_per_stratum(self):
        pts = latin_hypercube(4, stream(0, COLLOC))
        for j in range(2):
            strata = np.floor(pts[:, j] * 4).astype(int)
            assert sorted(strata.tolist()) == [0, 1, 2, 3]

    def test_deterministic(self):
        a = latin_hypercube(64, stream(5, COLLOC))
        b = latin_hypercube(64, stream(5, COLLOC))
        assert np.array_equal(a, b)

    def test_marginals_uniform(self):
        pts = latin_hypercube(50_000, stream(1, COLLOC))
        # LHS marginals are near-exactly uniform; binomial 3 sigma is generous
        for j in range(2):
            counts, _ = np.histogram(pts[:, j], bins=10, range=(0, 1))
            expected = 5000.0
            sigma = np.sqrt(50_000 * 0.1 * 0.9)
            assert np.all(np.abs(counts - expected) <= 3 * sigma)

    def test_in_unit_square(self):
        pts = latin_hypercube(1000, stream(2, COLLOC))
        assert pts.min() >= 0.0
        assert pts.max() <= 1.0
