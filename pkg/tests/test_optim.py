import numpy as np
import pytest

from ksdflow.flows import ParticleSet, gd_step, ksd_objective
from ksdflow.kernel import GaussianRBF
from ksdflow.optim import (LbfgsConfig, Objective, gd_minimize, lbfgs_minimize,
                           line_search_strong_wolfe)
from ksdflow.stein import SteinKernel
from ksdflow.targets import Banana


def quadratic(c):
    c = np.asarray(c, float)
    return lambda x: (0.5 * float(np.sum((x - c) ** 2)), x - c)


def rosenbrock(x):
    a, b = x
    f = (1 - a) ** 2 + 100 * (b - a * a) ** 2
    g = np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])
    return f, g


def assert_wolfe(res, c1=1e-4, c2=0.9):
    for rec in res.trace[1:]:
        if rec.kind == "wolfe":
            assert rec.armijo and rec.curvature, rec


class TestLbfgs:
    def test_quadratic_exact(self, rng):
        c = rng.normal(size=6)
        res = lbfgs_minimize(quadratic(c), rng.normal(size=6) * 5)
        assert res.converged
        assert res.n_iters <= 5
        assert np.abs(res.x - c).max() < 1e-8

    def test_ill_conditioned_quadratic(self):
        D = np.array([1.0, 10.0, 100.0])
        fun = lambda x: (0.5 * float(x @ (D * x)), D * x)  # noqa: E731
        res = lbfgs_minimize(fun, np.ones(3))
        assert res.converged and np.abs(res.x).max() < 1e-8
        assert_wolfe(res)

    def test_rosenbrock(self):
        res = lbfgs_minimize(rosenbrock, np.array([-1.2, 1.0]))
        assert res.converged
        assert res.n_iters < 200
        assert np.abs(res.x - 1.0).max() < 1e-6
        assert_wolfe(res)

    def test_zero_gradient_returns_start(self):
        x0 = np.array([1.0, 2.0])
        res = lbfgs_minimize(quadratic(x0), x0.copy())
        assert res.n_iters == 0 and res.converged
        np.testing.assert_array_equal(res.x, x0)

    def test_monotone_values(self):
        res = lbfgs_minimize(rosenbrock, np.array([-1.2, 1.0]))
        assert np.all(np.diff(res.values) < 0)

    def test_constant_shift_gives_identical_iterates(self):
        shifted = lambda x: (rosenbrock(x)[0] + 0.0, rosenbrock(x)[1])  # noqa: E731
        a = lbfgs_minimize(rosenbrock, np.array([-1.2, 1.0]))
        b = lbfgs_minimize(shifted, np.array([-1.2, 1.0]))
        np.testing.assert_array_equal(a.x, b.x)
        # a non-zero constant changes only the values
        c = lbfgs_minimize(lambda x: (rosenbrock(x)[0] + 4.0, rosenbrock(x)[1]),
                           np.array([-1.2, 1.0]))
        assert c.n_iters == a.n_iters
        np.testing.assert_allclose(c.x, a.x, atol=1e-6)

    def test_deterministic(self):
        a = lbfgs_minimize(rosenbrock, np.array([-1.2, 1.0]))
        b = lbfgs_minimize(rosenbrock, np.array([-1.2, 1.0]))
        np.testing.assert_array_equal(a.x, b.x)
        assert [r.value for r in a.trace] == [r.value for r in b.trace]

    def test_not_finite_at_start(self):
        with pytest.raises(ValueError):
            lbfgs_minimize(lambda x: (np.inf, x), np.ones(2))

    def test_gradient_shape_checked(self):
        with pytest.raises(ValueError):
            lbfgs_minimize(Objective(lambda x: (0.0, np.zeros(3)), 2), np.ones(2))

    def test_line_search_failure_falls_back(self):
        # gradient that disagrees with the function: Wolfe search cannot succeed
        def bad(x):
            return float(np.sum(x ** 2)), -2 * x

        res = lbfgs_minimize(bad, np.ones(2), LbfgsConfig(max_iters=5))
        assert res.status == "line_search_failed"
        assert not res.converged
        assert res.fun <= 2.0

    def test_config_validation(self):
        with pytest.raises(ValueError):
            LbfgsConfig(c1=0.9, c2=0.1)
        with pytest.raises(ValueError):
            LbfgsConfig(memory=0)

    def test_callback_once_per_iteration(self):
        seen = []
        res = lbfgs_minimize(rosenbrock, np.array([-1.2, 1.0]),
                             callback=lambda x, f, g: seen.append(f))
        assert len(seen) == res.n_iters
        assert seen[-1] == res.fun


def test_line_search_satisfies_strong_wolfe(rng):
    for _ in range(20):
        x = rng.normal(size=2) * 2
        f0, g0 = rosenbrock(x)
        p = -g0
        a, f, g, _ = line_search_strong_wolfe(rosenbrock, x, p, f0, g0, alpha0=1e-3)
        assert a is not None
        assert f <= f0 + 1e-4 * a * (g0 @ p)
        assert abs(g @ p) <= 0.9 * abs(g0 @ p)


def test_line_search_rejects_ascent_direction():
    x = np.array([0.5, 0.5])
    f0, g0 = rosenbrock(x)
    a, *_ = line_search_strong_wolfe(rosenbrock, x, g0, f0, g0)
    assert a is None


class TestGD:
    def test_monotone_on_quadratic(self, rng):
        res = gd_minimize(quadratic(rng.normal(size=3)), np.zeros(3), step=0.5, max_iters=50)
        assert np.all(np.diff(res.values) < 0)

    def test_rejects_zero_step(self):
        with pytest.raises(ValueError):
            gd_minimize(quadratic([0.0]), np.ones(1), step=0.0)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_flag(self):
        res = gd_minimize(lambda x: (float(np.exp(x @ x)), 2 * x * np.exp(x @ x)),
                          np.ones(2), step=10.0, max_iters=20)
        assert res.status == "diverged"

    def test_matches_ksd_gd_step_composition(self, rng):
        sk = SteinKernel(GaussianRBF(1.0), Banana())
        X = rng.normal(size=(5, 2))
        res = gd_minimize(ksd_objective(sk, 5, 2), X.ravel(), step=0.5, max_iters=10)
        p = ParticleSet(X)
        for _ in range(10):
            p = gd_step(p, sk, 0.5)
        np.testing.assert_allclose(res.x.reshape(5, 2), p.positions, rtol=1e-14, atol=1e-15)
