import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from gauss_eot import (DiscreteMeasure, Gaussian, InvalidInput, SingularMatrix, UnbalancedParams,
                       ot_sigma, plan_from_duals, plan_moments, sinkhorn_discrete_unbalanced,
                       sinkhorn_transform, unbalanced_duals, unbalanced_plan, uot,
                       uot_dual_objective)
from gauss_eot.unbalanced import tilde_transform, unbalanced_C

from conftest import random_pd, singular_psd

seeds = st.integers(0, 2 ** 32 - 1)


def instance(seed, d, sigma=None, gamma=None):
    rng = np.random.default_rng(seed)
    al = Gaussian(rng.standard_normal(d), random_pd(rng, d), rng.uniform(0.3, 3.0))
    be = Gaussian(rng.standard_normal(d), random_pd(rng, d), rng.uniform(0.3, 3.0))
    p = UnbalancedParams(sigma or rng.uniform(0.2, 1.5), gamma or rng.uniform(0.05, 5.0))
    return al, be, p


def grid_measure(g, n=1500, width=8.0):
    """Midpoint-rule discretization of a 1d scaled Gaussian."""
    s = np.sqrt(g.cov[0, 0])
    edges = np.linspace(g.mean[0] - width * s, g.mean[0] + width * s, n + 1)
    x = 0.5 * (edges[1:] + edges[:-1])
    w = g.mass * np.diff(stats.norm.cdf(edges, g.mean[0], s))
    w *= g.mass / w.sum()
    return DiscreteMeasure(x[:, None], w)


def rel_inf(x, ref):
    return np.abs(np.asarray(x) - ref).max() / np.abs(ref).max()


class TestParams:
    # evaluating 1 - tau loses about eps * gamma / (2 sigma^2) relative accuracy,
    # so the 1e-14 check is run where that is below the tolerance
    @given(st.floats(1e-2, 1e2), st.floats(1e-3, 40.0))
    def test_tau_lambda(self, sigma, ratio):
        p = UnbalancedParams(sigma, 2 * sigma ** 2 * ratio)
        assert 0 < p.tau < 1
        assert p.lam == pytest.approx(sigma ** 2 / (1 - p.tau), rel=1e-14)

    def test_invalid(self):
        with pytest.raises(InvalidInput):
            UnbalancedParams(0.5, 0.0)


class TestTilde:
    def test_examples(self):
        p = UnbalancedParams(0.5, 2.0)
        np.testing.assert_allclose(tilde_transform(np.zeros((2, 2)), p), 0.0, atol=1e-15)
        np.testing.assert_allclose(tilde_transform(1e6 * np.eye(2), p), np.eye(2), atol=1e-5 * 2.0)

    @given(seeds, st.integers(1, 5))
    def test_identity(self, seed, d):
        rng = np.random.default_rng(seed)
        A = random_pd(rng, d)
        p = UnbalancedParams(rng.uniform(0.2, 2), rng.uniform(0.1, 5))
        At = tilde_transform(A, p)
        ref = p.tau * np.linalg.inv(np.linalg.inv(A) + np.eye(d) / p.lam)
        np.testing.assert_allclose(At, ref, atol=1e-10 * max(1, np.abs(ref).max()))
        w = np.linalg.eigvalsh(At)
        assert w.min() > 0 and w.max() < p.gamma / 2


class TestC:
    def test_zero(self):
        p = UnbalancedParams(0.5, 1.0)
        np.testing.assert_allclose(unbalanced_C(np.zeros((2, 2)), np.eye(2), p), 0.0, atol=1e-15)

    def test_scalar(self):
        p = UnbalancedParams(0.7, 1.3)
        at, bt = 0.4, 0.2
        ref = np.sqrt(at * bt / p.tau + p.sigma ** 4 / 4) - p.sigma ** 2 / 2
        assert unbalanced_C([[at]], [[bt]], p)[0, 0] == pytest.approx(ref, rel=1e-13)

    @given(seeds, st.integers(1, 5))
    def test_residual(self, seed, d):
        al, be, p = instance(seed, d)
        At, Bt = tilde_transform(al.cov, p), tilde_transform(be.cov, p)
        C = unbalanced_C(At, Bt, p)
        assert np.linalg.norm(C @ C + p.sigma ** 2 * C - At @ Bt / p.tau) < 1e-9

    def test_singular_tilde(self, rng):
        # falls back to a general square root when neither side is invertible
        p = UnbalancedParams(0.5, 1.0)
        At = tilde_transform(singular_psd(rng, 3), p)
        Bt = tilde_transform(singular_psd(rng, 3), p)
        C = unbalanced_C(At, Bt, p)
        assert np.linalg.norm(C @ C + 0.25 * C - At @ Bt / p.tau) < 1e-9


class TestPlan:
    def test_symmetric_means(self, rng):
        a, A = rng.standard_normal(3), random_pd(rng, 3)
        plan = unbalanced_plan(Gaussian(a, A, 1.5), Gaussian(a, A, 1.5), UnbalancedParams(0.5, 1.0))
        np.testing.assert_allclose(plan.mean, np.concatenate([a, a]), atol=1e-14)

    def test_mass_decreases_with_distance(self, rng):
        A, B = random_pd(rng, 2), random_pd(rng, 2)
        p = UnbalancedParams(0.5, 1.0)
        direction = rng.standard_normal(2)
        masses = [unbalanced_plan(Gaussian(np.zeros(2), A), Gaussian(t * direction, B, 2.0), p).mass
                  for t in np.linspace(0, 5, 20)]
        assert np.all(np.diff(masses) < 0)
        assert masses[-1] > 0

    @given(seeds, st.integers(1, 5))
    def test_structure(self, seed, d):
        al, be, p = instance(seed, d)
        plan = unbalanced_plan(al, be, p)
        duals = unbalanced_duals(al, be, p)
        H = plan.cov
        np.testing.assert_array_equal(H, H.T)
        assert np.linalg.eigvalsh(H).min() > 0
        P = plan.scaled_precision(p.sigma)
        scale = max(1, np.abs(P).max())
        np.testing.assert_allclose(P[:d, d:], -np.eye(d), atol=1e-8 * scale)
        np.testing.assert_allclose(P[:d, :d], duals.F, atol=1e-8 * scale)
        np.testing.assert_allclose(P[d:, d:], duals.G, atol=1e-8 * scale)
        assert plan.mass > 0

    @given(seeds, st.integers(1, 5))
    def test_swap_symmetry(self, seed, d):
        al, be, p = instance(seed, d)
        p1, p2 = unbalanced_plan(al, be, p), unbalanced_plan(be, al, p)
        swap = np.r_[np.arange(d, 2 * d), np.arange(d)]
        np.testing.assert_allclose(p2.cov, p1.cov[np.ix_(swap, swap)], atol=1e-10 * np.abs(p1.cov).max())
        np.testing.assert_allclose(p2.mean, p1.mean[swap], atol=1e-10)
        assert p2.mass == pytest.approx(p1.mass, rel=1e-10)
        assert uot(be, al, p) == pytest.approx(uot(al, be, p), rel=1e-10, abs=1e-10)

    def test_singular(self, rng):
        with pytest.raises(SingularMatrix):
            unbalanced_plan(Gaussian(np.zeros(3), singular_psd(rng, 3)),
                            Gaussian(np.zeros(3), random_pd(rng, 3)), UnbalancedParams(0.5, 1.0))

    def test_dense_grid_oracle(self):
        al = Gaussian([-0.3], [[0.6]], 1.0)
        be = Gaussian([0.5], [[0.3]], 1.5)
        p = UnbalancedParams(0.5, 1.0)
        X, Y = grid_measure(al), grid_measure(be)
        res = sinkhorn_discrete_unbalanced(X, Y, p.sigma, p.gamma)
        mass, mean, cov = plan_moments(res.f, res.g, X, Y, p.sigma)
        plan = unbalanced_plan(al, be, p)
        assert mass == pytest.approx(plan.mass, rel=0.02)
        assert rel_inf(mean, plan.mean) < 0.02
        assert rel_inf(cov, plan.cov) < 0.02
        assert res.value == pytest.approx(uot(al, be, p), rel=0.01)


class TestUOT:
    def test_vanishing_target(self, rng):
        al = Gaussian(np.zeros(2), random_pd(rng, 2), 1.3)
        be = Gaussian(np.ones(2), random_pd(rng, 2), 1e-8)
        p = UnbalancedParams(0.5, 1.0)
        assert uot(al, be, p) == pytest.approx(p.gamma * al.mass, rel=1e-3)

    def test_large_gamma(self, rng):
        for _ in range(5):
            al = Gaussian(rng.standard_normal(3), random_pd(rng, 3))
            be = Gaussian(rng.standard_normal(3), random_pd(rng, 3))
            assert abs(uot(al, be, UnbalancedParams(0.5, 1e6)) - ot_sigma(al, be, 0.5)) < 1e-3

    @given(seeds, st.integers(1, 5))
    def test_dual_objective(self, seed, d):
        # fixes the mass coefficient 2 (sigma^2 + gamma)
        al, be, p = instance(seed, d)
        val = uot(al, be, p)
        dual = uot_dual_objective(unbalanced_duals(al, be, p), al, be, p)
        assert abs(val - dual) <= 1e-6 * max(abs(val), 1e-300)


class TestDuals:
    def test_centered(self, rng):
        d = unbalanced_duals(Gaussian(np.zeros(2), random_pd(rng, 2), 2.0),
                             Gaussian(np.zeros(2), random_pd(rng, 2)), UnbalancedParams(0.5, 1.0))
        np.testing.assert_allclose(d.u, 0.0, atol=1e-15)
        np.testing.assert_allclose(d.v, 0.0, atol=1e-15)

    @given(seeds, st.integers(1, 5))
    def test_round_trip(self, seed, d):
        al, be, p = instance(seed, d)
        duals = unbalanced_duals(al, be, p)
        for h, meas, target in ((duals.g, be, duals.f), (duals.f, al, duals.g)):
            out = sinkhorn_transform(h, meas, p.sigma, p.tau)
            scale = max(1, np.abs(target.U).max())
            np.testing.assert_allclose(out.U, target.U, atol=1e-8 * scale)
            np.testing.assert_allclose(out.u, target.u, atol=1e-8 * max(1, np.abs(target.u).max()))
            assert out.log_m == pytest.approx(target.log_m, abs=1e-8 * max(1, abs(target.log_m)))

    @given(seeds, st.integers(1, 5))
    def test_plan_from_duals(self, seed, d):
        al, be, p = instance(seed, d)
        plan = unbalanced_plan(al, be, p)
        rec = plan_from_duals(unbalanced_duals(al, be, p), al, be, p)
        assert rec.mass == pytest.approx(plan.mass, rel=1e-8)
        np.testing.assert_allclose(rec.mean, plan.mean, atol=1e-8 * max(1, np.abs(plan.mean).max()))
        np.testing.assert_allclose(rec.cov, plan.cov, atol=1e-8 * max(1, np.abs(plan.cov).max()))

    @given(seeds, st.integers(1, 5))
    def test_change_of_variables(self, seed, d):
        al, be, p = instance(seed, d)
        duals = unbalanced_duals(al, be, p)
        At, Bt = tilde_transform(al.cov, p), tilde_transform(be.cov, p)
        inv, s2 = np.linalg.inv, p.sigma ** 2
        Gt = duals.G / p.tau
        assert np.abs(duals.F - (inv(Gt) + s2 * inv(At / p.tau))).max() < 1e-9 * max(1, np.abs(duals.F).max())
        assert np.abs(Gt - (inv(duals.F) + s2 * inv(Bt))).max() < 1e-9 * max(1, np.abs(Gt).max())

    @given(seeds, st.integers(1, 5))
    def test_determinant_identity(self, seed, d):
        al, be, p = instance(seed, d)
        duals = unbalanced_duals(al, be, p)
        At, Bt = tilde_transform(al.cov, p), tilde_transform(be.cov, p)
        C = unbalanced_C(At, Bt, p)
        lhs = np.linalg.slogdet(duals.F @ duals.G - np.eye(d))
        rhs = (d * np.log(p.sigma ** 2) + np.linalg.slogdet(C - 2 / p.gamma * At @ Bt)[1]
               - 2 * np.linalg.slogdet(C)[1])
        assert lhs[0] > 0
        assert abs(np.expm1(lhs[1] - rhs)) < 1e-8

    @given(seeds, st.integers(1, 5))
    def test_mean_fixed_point(self, seed, d):
        al, be, p = instance(seed, d)
        duals = unbalanced_duals(al, be, p)
        plan = unbalanced_plan(al, be, p)
        inv, tau = np.linalg.inv, p.tau
        Ainv_a, Binv_b = inv(al.cov) @ al.mean, inv(be.cov) @ be.mean
        K = np.block([[np.eye(d), tau * inv(duals.G)], [tau * inv(duals.F), np.eye(d)]])
        uv = np.concatenate([duals.u, duals.v])
        rhs = -tau * np.concatenate([inv(duals.G) @ Binv_b, inv(duals.F) @ Ainv_a])
        assert np.abs(K @ uv - rhs).max() < 1e-8 * max(1, np.abs(rhs).max())
        lin = uv + np.concatenate([Ainv_a, Binv_b])
        assert np.abs(plan.cov @ lin - plan.mean).max() < 1e-8 * max(1, np.abs(plan.mean).max())
