import numpy as np
import pytest

from ksdflow.kernel import IMQ, GaussianRBF
from ksdflow.stein import SteinKernel, evaluate_particles
from ksdflow.targets import Banana, Gaussian, LogisticPosterior, symmetric_mixture
from oracles import central_diff, gaussian_logp, rel_err, stein_pair


def _cases(rng):
    feats = rng.normal(size=(20, 2))
    labels = np.where(feats[:, 0] > 0, 1.0, -1.0)
    return [
        SteinKernel(GaussianRBF(1.0), Gaussian.standard(2)),
        SteinKernel(GaussianRBF(0.8), symmetric_mixture(0.3)),
        SteinKernel(IMQ(1.0, -0.5), Banana(2.0, 0.2)),
        SteinKernel(GaussianRBF(1.5), LogisticPosterior(feats, labels)),
    ]


class TestValues:
    def test_coincident_origin_one_dim(self):
        sk = SteinKernel(GaussianRBF(1.0), Gaussian.standard(1))
        assert sk.kpi([0.0], [0.0]) == 1.0

    @pytest.mark.parametrize("d", [1, 2, 4])
    def test_diagonal_is_norm_plus_dim(self, d, rng):
        sk = SteinKernel(GaussianRBF(1.0), Gaussian.standard(d))
        X = rng.normal(size=(10, d))
        np.testing.assert_allclose(sk.kpi_diag(X), np.sum(X ** 2, axis=1) + d, rtol=1e-14)

    def test_against_symbolic_oracle(self, rng):
        prec = ((1.5, 0.4), (0.4, 0.8))
        kpi, _ = stein_pair(gaussian_logp, ((0.3, -0.2), prec), 2, 1.3)
        sk = SteinKernel(GaussianRBF(1.3), Gaussian([0.3, -0.2], np.linalg.inv(prec)))
        for _ in range(10):
            x, y = rng.normal(size=(2, 2))
            assert sk.kpi(x, y) == pytest.approx(kpi(x, y), rel=1e-12, abs=1e-14)

    def test_symmetric(self, rng):
        for sk in _cases(rng):
            for _ in range(10):
                x, y = rng.normal(size=(2, sk.dim))
                assert sk.kpi(x, y) == pytest.approx(sk.kpi(y, x), rel=1e-12, abs=1e-12)


class TestGradients:
    def test_grad2_against_finite_differences(self, rng):
        for sk in _cases(rng):
            for _ in range(25):
                x, y = rng.normal(size=(2, sk.dim))
                num = central_diff(lambda z: sk.kpi(x, z), y, 1e-5)
                assert rel_err(sk.grad2_kpi(x, y), num) < 1e-5

    def test_grad1_against_finite_differences(self, rng):
        for sk in _cases(rng):
            for _ in range(25):
                x, y = rng.normal(size=(2, sk.dim))
                num = central_diff(lambda z: sk.kpi(z, y), x, 1e-5)
                assert rel_err(sk.grad1_kpi(x, y), num) < 1e-5

    def test_zero_at_mode(self):
        sk = SteinKernel(GaussianRBF(1.0), Gaussian.standard(3))
        assert np.all(sk.grad2_kpi(np.zeros(3), np.zeros(3)) == 0)

    def test_symmetry_plane_gradient_stays_in_plane(self, rng):
        sk = SteinKernel(GaussianRBF(1.0), symmetric_mixture(0.1))
        for _ in range(20):
            x = np.array([0.0, rng.normal()])
            y = np.array([0.0, rng.normal()])
            assert abs(sk.grad2_kpi(x, y)[0]) < 1e-10


class TestEvaluate:
    def test_single_particle_at_mode(self):
        sk = SteinKernel(GaussianRBF(1.0), Gaussian.standard(2))
        ev = sk.evaluate(np.zeros((1, 2)))
        np.testing.assert_array_equal(ev.gram, [[2.0]])
        assert np.all(ev.grad_gram == 0)

    def test_duplicates(self):
        sk = SteinKernel(GaussianRBF(1.0), Banana())
        ev = sk.evaluate(np.array([[0.3, 0.1], [0.3, 0.1]]))
        assert np.all(ev.gram == ev.gram[0, 0])

    def test_fast_path_matches_pairwise_definition(self, rng):
        for sk in _cases(rng):
            X = rng.normal(size=(5, sk.dim))
            ev = sk.evaluate(X)
            for i in range(5):
                for j in range(5):
                    assert ev.gram[i, j] == pytest.approx(sk.kpi(X[i], X[j]), rel=1e-12,
                                                          abs=1e-12)
                    np.testing.assert_allclose(ev.grad_gram[j, i], sk.grad2_kpi(X[j], X[i]),
                                               rtol=1e-11, atol=1e-12)

    def test_gram_symmetric_and_psd(self, rng):
        for sk in _cases(rng):
            ev = sk.evaluate(rng.normal(size=(25, sk.dim)), with_grad=False)
            assert ev.grad_gram is None
            np.testing.assert_array_equal(ev.gram, ev.gram.T)
            w = np.linalg.eigvalsh(ev.gram)
            assert w[0] >= -1e-8 * w[-1]

    def test_rejects_non_finite(self):
        sk = SteinKernel(GaussianRBF(1.0), Gaussian.standard(2))
        with pytest.raises(ValueError):
            sk.evaluate(np.array([[0.0, np.inf]]))

    def test_evaluate_particles_accepts_particle_set(self, rng):
        from ksdflow.flows import ParticleSet

        sk = SteinKernel(GaussianRBF(1.0), Gaussian.standard(2))
        X = rng.normal(size=(4, 2))
        np.testing.assert_array_equal(evaluate_particles(sk, ParticleSet(X)).gram,
                                      sk.evaluate(X).gram)


def test_grad_stein_identity_monte_carlo():
    # E_pi grad2 k_pi(X, y) = 0 componentwise
    model = Gaussian.standard(2)
    sk = SteinKernel(GaussianRBF(1.0), model)
    X = model.sample(100_000, np.random.default_rng(3))
    y = np.array([0.5, -0.5])
    G = sk.grad2_kpi(X, np.broadcast_to(y, X.shape))
    se = G.std(axis=0) / np.sqrt(len(X))
    assert np.all(np.abs(G.mean(axis=0)) < 4 * se)
