import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from gauss_eot import (Gaussian, InvalidInput, NotIntegrable, QuadPotential, SingularMatrix,
                       add_factored, eval_quad, gaussian_convolve_quad, log_gaussian_integral,
                       sinkhorn_transform)

from conftest import random_pd, random_sym

seeds = st.integers(0, 2 ** 32 - 1)


def q1(U, u, log_m=0.0):
    return QuadPotential(np.array([[U]]), np.array([u]), log_m)


def log_integral(logf, c, prec):
    """log of the integral of exp(logf) over R, for a log-concave bump peaked at c
    with curvature prec, by adaptive quadrature."""
    ref = logf(c)
    w = 40 / np.sqrt(prec)
    val, _ = integrate.quad(lambda y: np.exp(logf(y) - ref), c - w, c + w, points=[c],
                            limit=400, epsabs=0, epsrel=1e-12)
    return np.log(val) + ref


def convolve_oracle(U, u, log_m, sigma, x):
    prec = U + 1 / sigma ** 2
    logf = lambda y: (-0.5 * (U * y * y - 2 * u * y) + log_m - (x - y) ** 2 / (2 * sigma ** 2)
                      - 0.5 * np.log(2 * np.pi * sigma ** 2))
    return log_integral(logf, (u + x / sigma ** 2) / prec, prec)


def transform_oracle(U, u, log_m, mass, a, A, sigma, tau, x):
    prec = U + 1 / A + 1 / sigma ** 2
    logf = lambda y: (np.log(mass) - (y - a) ** 2 / (2 * A) - 0.5 * np.log(2 * np.pi * A)
                      - 0.5 * (U * y * y - 2 * u * y) + log_m - (x - y) ** 2 / (2 * sigma ** 2))
    return -tau * log_integral(logf, (u + a / A + x / sigma ** 2) / prec, prec)


def random_scalar_instance(rng):
    sigma = rng.uniform(0.3, 2.0)
    A = rng.uniform(0.2, 3.0)
    # U may be negative as long as the integral converges
    U = rng.uniform(-0.5, 1.0) * min(1 / A, 1 / sigma ** 2)
    return dict(U=U, u=rng.normal(), log_m=rng.normal(), mass=rng.uniform(0.2, 3.0),
                a=rng.normal(), A=A, sigma=sigma, tau=rng.uniform(0.05, 1.0))


class TestEval:
    def test_constant(self, rng):
        h = QuadPotential(np.zeros((3, 3)), np.zeros(3), 1.7)
        assert eval_quad(h, rng.standard_normal(3)) == 1.7
        assert h(np.zeros(3)) == 1.7

    def test_unit(self):
        h = QuadPotential(np.eye(2), np.zeros(2), 0.3)
        assert eval_quad(h, np.array([1.0, 0.0])) == pytest.approx(-0.5 + 0.3)

    def test_loop_oracle_and_batch(self, rng):
        d = 4
        h = QuadPotential(random_sym(rng, d), rng.standard_normal(d), rng.normal())
        X = rng.standard_normal((5, d))
        for x, val in zip(X, eval_quad(h, X)):
            ref = h.log_m + sum(h.u[i] * x[i] for i in range(d)) - 0.5 * sum(
                x[i] * h.U[i, j] * x[j] for i in range(d) for j in range(d))
            assert val == pytest.approx(ref, rel=1e-12, abs=1e-12)
            assert eval_quad(h, x) == pytest.approx(val, rel=1e-14, abs=1e-14)

    def test_dim_mismatch(self):
        with pytest.raises(InvalidInput):
            eval_quad(QuadPotential.zero(2), np.zeros(3))


class TestAddFactored:
    def test_common_center(self, rng):
        a = rng.standard_normal(3)
        C, c, q = add_factored(random_pd(rng, 3), a, random_pd(rng, 3), a)
        np.testing.assert_allclose(c, a, atol=1e-12)
        assert q == pytest.approx(0.0, abs=1e-12)

    def test_zero_B(self, rng):
        A, a = random_pd(rng, 3), rng.standard_normal(3)
        C, c, q = add_factored(A, a, np.zeros((3, 3)), rng.standard_normal(3))
        np.testing.assert_array_equal(C, A)
        np.testing.assert_allclose(c, a, atol=1e-12)
        assert q == pytest.approx(0.0, abs=1e-12)

    def test_scalar_by_hand(self):
        # -(x^2 + (x-2)^2)/2 = -((x-1)^2 * 2 + 2)/2
        C, c, q = add_factored([[1.0]], [0.0], [[1.0]], [2.0])
        assert (C[0, 0], c[0], q) == (2.0, pytest.approx(1.0), pytest.approx(2.0))

    def test_singular(self):
        with pytest.raises(SingularMatrix):
            add_factored(np.diag([1.0, 0.0]), np.zeros(2), np.diag([-1.0, 0.0]), np.zeros(2))

    @given(seeds, st.integers(1, 6))
    def test_pointwise_identity(self, seed, d):
        rng = np.random.default_rng(seed)
        A, B = random_sym(rng, d), random_pd(rng, d)
        A = A + (abs(np.linalg.eigvalsh(A).min()) + 0.1) * np.eye(d)
        a, b = rng.standard_normal(d), rng.standard_normal(d)
        C, c, q = add_factored(A, a, B, b)
        for x in rng.standard_normal((100, d)):
            lhs = -0.5 * ((x - a) @ A @ (x - a)) - 0.5 * ((x - b) @ B @ (x - b))
            rhs = -0.5 * ((x - c) @ C @ (x - c) + q)
            assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


class TestConvolve:
    def test_constant(self):
        h = QuadPotential(np.zeros((2, 2)), np.zeros(2), 0.4)
        r = gaussian_convolve_quad(h, 1.3)
        np.testing.assert_array_equal(r.U, h.U)
        np.testing.assert_array_equal(r.u, h.u)
        assert r.log_m == pytest.approx(0.4, abs=1e-15)

    def test_scalar(self):
        r = gaussian_convolve_quad(q1(1.0, 0.0), 1.0)
        assert r.U[0, 0] == pytest.approx(0.5)
        assert r.log_m == pytest.approx(-0.5 * np.log(2))

    def test_not_integrable(self):
        with pytest.raises(NotIntegrable):
            gaussian_convolve_quad(q1(-2.0, 0.0), 1.0)

    def test_quadrature(self, rng):
        for _ in range(10):
            inst = random_scalar_instance(rng)
            r = gaussian_convolve_quad(q1(inst["U"], inst["u"], inst["log_m"]), inst["sigma"])
            for x in rng.normal(scale=2, size=3):
                ref = convolve_oracle(inst["U"], inst["u"], inst["log_m"], inst["sigma"], x)
                assert np.exp(eval_quad(r, np.array([x])) - ref) == pytest.approx(1.0, abs=1e-6)


class TestSinkhornTransform:
    def test_zero_potential(self):
        r = sinkhorn_transform(QuadPotential.zero(3), Gaussian.standard(3), 1.0)
        np.testing.assert_allclose(r.U, -0.5 * np.eye(3), atol=1e-15)
        np.testing.assert_allclose(r.u, 0.0, atol=1e-15)

    def test_boundary(self, rng):
        A, sigma = random_pd(rng, 2), 0.7
        U = -(1 / sigma ** 2 + 1) * np.eye(2) - np.linalg.inv(A)
        with pytest.raises(NotIntegrable):
            sinkhorn_transform(QuadPotential(U, np.zeros(2)), Gaussian(np.zeros(2), A), sigma)

    def test_bad_tau(self):
        with pytest.raises(ValueError):
            sinkhorn_transform(QuadPotential.zero(1), Gaussian.standard(1), 1.0, tau=0.0)

    def test_quadrature_unbalanced_tau(self, rng):
        for _ in range(10):
            p = random_scalar_instance(rng)
            gamma = rng.uniform(0.1, 5)
            tau = gamma / (2 * p["sigma"] ** 2 + gamma)
            meas = Gaussian([p["a"]], [[p["A"]]], p["mass"])
            r = sinkhorn_transform(q1(p["U"], p["u"], p["log_m"]), meas, p["sigma"], tau)
            for x in rng.normal(scale=2, size=3):
                ref = transform_oracle(p["U"], p["u"], p["log_m"], p["mass"], p["a"], p["A"],
                                       p["sigma"], tau, x)
                assert eval_quad(r, np.array([x])) == pytest.approx(ref, abs=1e-6)

    @given(seeds, st.integers(1, 5), st.floats(0.05, 1.0))
    def test_double_transform_admissible(self, seed, d, tau):
        rng = np.random.default_rng(seed)
        alpha = Gaussian(rng.standard_normal(d), random_pd(rng, d))
        beta = Gaussian(rng.standard_normal(d), random_pd(rng, d), 2.0)
        sigma = rng.uniform(0.2, 2.0)
        h = QuadPotential(random_pd(rng, d), rng.standard_normal(d))
        g = sinkhorn_transform(h, alpha, sigma, tau)
        f = sinkhorn_transform(g, beta, sigma, tau)
        # the output of a transform is always an admissible input again
        F = sigma ** 2 * f.U + sigma ** 2 * np.linalg.inv(alpha.cov) + np.eye(d)
        assert np.linalg.eigvalsh(F).min() > 0
        assert np.all(np.isfinite(f.u)) and np.isfinite(f.log_m)


def test_log_gaussian_integral_quadrature(rng):
    for _ in range(5):
        p = random_scalar_instance(rng)
        meas = Gaussian([p["a"]], [[p["A"]]], p["mass"])
        h = q1(p["U"], p["u"], p["log_m"])
        logf = lambda y: (np.log(p["mass"]) - (y - p["a"]) ** 2 / (2 * p["A"])
                          - 0.5 * np.log(2 * np.pi * p["A"]) + eval_quad(h, np.array([y])))
        prec = p["U"] + 1 / p["A"]
        ref = log_integral(logf, (p["u"] + p["a"] / p["A"]) / prec, prec)
        assert log_gaussian_integral(h, meas) == pytest.approx(ref, abs=1e-8)
