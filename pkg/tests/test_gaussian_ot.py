import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from gauss_eot import (Gaussian, InvalidInput, NotPsd, SingularMatrix, bures, bures_grad,
                       monge_map, w2_gaussian)

from conftest import random_pd, singular_psd

seeds = st.integers(0, 2 ** 32 - 1)


def sym_fd(fun, A, h=1e-5):
    """Central finite differences along symmetric unit directions."""
    d = A.shape[0]
    G = np.zeros((d, d))
    for i in range(d):
        for j in range(i, d):
            E = np.zeros((d, d))
            E[i, j] = E[j, i] = 0.5 if i != j else 1.0
            G[i, j] = G[j, i] = (fun(A + h * E) - fun(A - h * E)) / (2 * h)
    return G


class TestGaussian:
    def test_validation(self):
        with pytest.raises(InvalidInput):
            Gaussian([0.0], [[1.0]], mass=0.0)
        with pytest.raises(InvalidInput):
            Gaussian([0.0, 1.0], [[1.0]])
        with pytest.raises(NotPsd):
            Gaussian([0.0], [[-1.0]])


class TestBures:
    def test_identical(self, rng):
        A = random_pd(rng, 4)
        assert bures(A, A) == pytest.approx(0.0, abs=1e-12)

    def test_commuting(self):
        assert bures([[4.0]], [[9.0]]) == pytest.approx(1.0)
        assert bures(np.diag([4.0, 1.0]), np.diag([9.0, 4.0])) == pytest.approx(2.0)

    def test_monge_identity(self, rng):
        A, B = random_pd(rng, 5), random_pd(rng, 5)
        T = monge_map(A, B)
        assert bures(A, B) == pytest.approx(np.trace(A) + np.trace(B) - 2 * np.trace(T @ A), rel=1e-10)

    def test_point_mass(self, rng):
        A = random_pd(rng, 3)
        assert bures(A, np.zeros((3, 3))) == pytest.approx(np.trace(A), rel=1e-12)

    def test_singular_allowed(self, rng):
        A, B = singular_psd(rng, 4), random_pd(rng, 4)
        assert np.isfinite(bures(A, B))

    @given(seeds, st.integers(1, 6))
    def test_symmetric(self, seed, d):
        rng = np.random.default_rng(seed)
        A, B = random_pd(rng, d), random_pd(rng, d)
        assert abs(bures(A, B) - bures(B, A)) < 1e-10


class TestW2:
    def test_examples(self):
        g = Gaussian([1.0, 2.0], np.eye(2))
        assert w2_gaussian(g, g) == pytest.approx(0.0, abs=1e-14)
        assert w2_gaussian(Gaussian([0.0], [[4.0]]), Gaussian([1.0], [[9.0]])) == pytest.approx(2.0)

    def test_unbalanced_rejected(self):
        with pytest.raises(InvalidInput):
            w2_gaussian(Gaussian([0.0], [[1.0]], 2.0), Gaussian([0.0], [[1.0]]))

    def test_quantile_oracle(self, rng):
        # in 1d the monotone coupling of quantiles is optimal
        for _ in range(5):
            a, b = rng.normal(size=2)
            A, B = rng.uniform(0.1, 3, size=2)
            u = (np.arange(200_000) + 0.5) / 200_000
            qx = stats.norm.ppf(u, a, np.sqrt(A))
            qy = stats.norm.ppf(u, b, np.sqrt(B))
            ref = np.mean((qx - qy) ** 2)
            assert w2_gaussian(Gaussian([a], [[A]]), Gaussian([b], [[B]])) == pytest.approx(ref, abs=1e-3)


class TestMonge:
    def test_examples(self, rng):
        A = random_pd(rng, 3)
        np.testing.assert_allclose(monge_map(A, A), np.eye(3), atol=1e-10)
        assert monge_map([[4.0]], [[9.0]])[0, 0] == pytest.approx(1.5)

    def test_pushforward(self, rng):
        A, B = random_pd(rng, 6), random_pd(rng, 6)
        T = monge_map(A, B)
        np.testing.assert_allclose(T @ A @ T.T, B, atol=1e-8)

    def test_singular(self, rng):
        with pytest.raises(SingularMatrix):
            monge_map(singular_psd(rng, 3), random_pd(rng, 3))

    @given(seeds, st.integers(1, 6))
    def test_inverse_relation(self, seed, d):
        rng = np.random.default_rng(seed)
        A, B = random_pd(rng, d), random_pd(rng, d)
        np.testing.assert_allclose(monge_map(A, B) @ monge_map(B, A), np.eye(d), atol=1e-8)


class TestBuresGrad:
    def test_examples(self, rng):
        A = random_pd(rng, 3)
        np.testing.assert_allclose(bures_grad(A, A), 0.0, atol=1e-10)
        assert bures_grad([[4.0]], [[9.0]])[0, 0] == pytest.approx(-0.5)

    def test_finite_differences(self, rng):
        A, B = random_pd(rng, 4), random_pd(rng, 4)
        G = bures_grad(A, B)
        fd = sym_fd(lambda M: bures(M, B), A)
        np.testing.assert_allclose(G, fd, rtol=1e-5, atol=1e-5 * np.abs(G).max())
