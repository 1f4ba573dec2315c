"""Sample-based oracle: Gaussian sampling and discrete log-domain Sinkhorn.

The discrete solvers find the fixed point of the (tau-)Sinkhorn updates

    g_j = -tau eps log sum_i a_i exp((f_i - |x_i - y_j|^2) / eps),  eps = 2 sigma^2

(and symmetrically for ``f``). Plain alternating updates stall for hours on
point clouds with nearly isolated clusters, so the fixed point is reached
by damped Newton-CG on the semi-dual in ``g``. The kernel is stabilized
around anchor potentials that are re-set when the iterates drift.

Randomness comes from :class:`SeededRng`, a counter-based Philox stream.
"""

import csv
import hashlib
import io
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import logsumexp

from ._errors import InvalidInput, NotConverged, Unsupported
from .entropic import ot_sigma
from .gaussian_ot import Gaussian
from .linalg import _sqrtm
from .unbalanced import UnbalancedParams, unbalanced_plan, uot
from .validation import check_positive, check_sigma

logger = logging.getLogger(__name__)

RNG_ALGORITHM = "numpy.random.Philox (Philox-4x64, 10 rounds)"
DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 10_000
CSV_COLUMNS = ("d", "n", "trial", "sigma", "gamma", "mass_alpha", "mass_beta",
               "empirical", "closed_form", "seed")
MOMENT_COLUMNS = ("d", "n", "trial", "sigma", "gamma", "mass_alpha", "mass_beta",
                  "mean_rel_err", "cov_rel_err", "mass_rel_err", "seed")

# entries per block when materializing n x m arrays
_BLOCK = 10_000_000
# re-anchor the kernel past this drift (in units of eps)
_ABSORB = 30.0
_WARM_VIOLATION = 0.05
_WARM_SWEEPS = 50


@dataclass(frozen=True)
class SeededRng:
    """Seeded counter-based generator; same seed, same stream on every platform."""

    seed: int
    algorithm: str = field(default=RNG_ALGORITHM, init=False)

    def generator(self):
        return np.random.Generator(np.random.Philox(int(self.seed) % 2 ** 64))


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted point cloud."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.points, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        w = np.asarray(self.weights, dtype=float).ravel()
        if X.ndim != 2 or X.shape[0] != w.shape[0]:
            raise InvalidInput("points must be (n, d) with one weight per point")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(w))) or np.any(w < 0):
            raise InvalidInput("weights must be finite and non-negative")
        object.__setattr__(self, "points", X)
        object.__setattr__(self, "weights", w)

    @property
    def mass(self):
        return float(self.weights.sum())

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]


class SinkhornResult(NamedTuple):
    f: np.ndarray
    g: np.ndarray
    value: float
    n_iter: int


class UnbalancedSinkhornResult(NamedTuple):
    f: np.ndarray
    g: np.ndarray
    value: float
    mass: float
    n_iter: int


@dataclass(frozen=True)
class ExperimentRow:
    d: int
    n: int
    trial: int
    sigma: float
    gamma: float
    mass_alpha: float
    mass_beta: float
    empirical: float
    closed_form: float
    seed: int


@dataclass(frozen=True)
class MomentRow:
    d: int
    n: int
    trial: int
    sigma: float
    gamma: float
    mass_alpha: float
    mass_beta: float
    mean_rel_err: float
    cov_rel_err: float
    mass_rel_err: float
    seed: int


def sample_gaussian(g, n, rng):
    """Draw ``n`` points ``mean + L z`` with ``L = cov^{1/2}``; each weighs ``mass / n``."""
    n = int(n)
    if n < 1:
        raise InvalidInput("n must be positive")
    z = rng.generator().standard_normal((n, g.dim))
    L = _sqrtm(g.cov)
    return DiscreteMeasure(g.mean + z @ L, np.full(n, g.mass / n))


def sample_wishart(d, scale, dof, rng):
    """Wishart draw ``scale * G G'`` with ``G`` a ``d x dof`` standard normal matrix."""
    d, dof = int(d), int(dof)
    if d < 1 or dof < d:
        raise InvalidInput(f"need dof >= d >= 1, got d={d}, dof={dof}")
    G = rng.generator().standard_normal((d, dof))
    M = scale * G @ G.T
    return 0.5 * (M + M.T)


def cost_matrix(X, Y, out=None):
    """Squared Euclidean costs, built in row blocks of at most ``10**7`` entries."""
    n, m = X.shape[0], Y.shape[0]
    C = np.empty((n, m)) if out is None else out
    y2 = np.einsum("ij,ij->i", Y, Y)
    step = max(1, _BLOCK // max(m, 1))
    for s in range(0, n, step):
        Xb = X[s:s + step]
        blk = C[s:s + step]
        np.matmul(Xb, Y.T, out=blk)
        blk *= -2.0
        blk += np.einsum("ij,ij->i", Xb, Xb)[:, None]
        blk += y2[None, :]
        np.maximum(blk, 0.0, out=blk)
    return C


def _c_transform(X, Y, lw, h, eps):
    """``-eps log sum_j exp(lw_j + (h_j - |x_i - y_j|^2) / eps)`` for each ``x_i``, blockwise."""
    out = np.empty(X.shape[0])
    step = max(1, _BLOCK // max(Y.shape[0], 1))
    w = lw + h / eps
    for s in range(0, X.shape[0], step):
        C = cost_matrix(X[s:s + step], Y)
        C *= -1.0 / eps
        C += w[None, :]
        out[s:s + step] = -eps * logsumexp(C, axis=1)
    return out


class _Kernel:
    """Gibbs kernel stabilized around anchor potentials ``(fh, gh)``.

    ``K_ij = exp((fh_i + gh_j - C_ij) / eps)``, so the plan of ``(f, g)`` is
    ``diag(u) K diag(v)`` with ``u = a exp((f - fh)/eps)``,
    ``v = b exp((g - gh)/eps)``.
    """

    def __init__(self, X, Y, la, lb, eps, tau):
        self.X, self.Y = X, Y
        self.la, self.lb, self.eps, self.tau = la, lb, eps, tau
        self.K = np.empty((X.shape[0], Y.shape[0]))
        self._k2 = None

    def exact_f(self, g):
        return self.tau * _c_transform(self.X, self.Y, self.lb, g, self.eps)

    def exact_g(self, f):
        return self.tau * _c_transform(self.Y, self.X, self.la, f, self.eps)

    def _fill(self, fh, gh):
        self.fh, self.gh = fh, gh
        K = cost_matrix(self.X, self.Y, out=self.K)
        K -= fh[:, None]
        K -= gh[None, :]
        K *= -1.0 / self.eps
        np.exp(K, out=K)
        # flush subnormals: they make BLAS crawl
        K[K < 1e-290] = 0.0
        self._k2 = None

    def start(self):
        """Anchor at the column minima of the cost, so every column of K peaks at 1."""
        fh = np.zeros(self.X.shape[0])
        gh = np.zeros(self.Y.shape[0])
        cost_matrix(self.X, self.Y, out=self.K).min(axis=0, out=gh)
        self._fill(fh, gh)

    def absorb(self, f, g):
        self._fill(f.copy(), g.copy())

    @property
    def K2(self):
        """Entrywise square of the kernel (for the Jacobi preconditioner)."""
        if self._k2 is None:
            self._k2 = np.square(self.K)
            self._k2[self._k2 < 1e-290] = 0.0
        return self._k2

    def u(self, f):
        return np.exp(self.la + (f - self.fh) / self.eps)

    def v(self, g):
        return np.exp(self.lb + (g - self.gh) / self.eps)

    def f_of(self, g, exact=True):
        with np.errstate(all="ignore"):
            f = self.tau * (self.fh - self.eps * np.log(self.K @ self.v(g)))
        if exact and not np.all(np.isfinite(f)):
            f = self.exact_f(g)
        return f

    def g_of(self, f):
        with np.errstate(all="ignore"):
            g = self.tau * (self.gh - self.eps * np.log(self.K.T @ self.u(f)))
        return g if np.all(np.isfinite(g)) else self.exact_g(f)

    def drift(self, f, g):
        return max(np.abs(f - self.fh).max(), np.abs(g - self.gh).max()) / self.eps


def _semi_dual(f, g, a, b, eps, gamma):
    """Dual objective at ``f = tau T(g)`` (rows of the plan are then exact)."""
    if np.isinf(gamma):
        return a @ f + b @ g
    mass = a @ np.exp(-f / gamma)
    return (gamma * (a @ -np.expm1(-f / gamma)) + gamma * (b @ -np.expm1(-g / gamma))
            - eps * (mass - a.sum() * b.sum()))


def _pcg(matvec, rhs, diag, rtol, maxiter):
    x = np.zeros_like(rhs)
    r = rhs.copy()
    z = r / diag
    p = z.copy()
    rz = r @ z
    stop = rtol * np.linalg.norm(rhs)
    k = 0
    for k in range(1, maxiter + 1):
        Ap = matvec(p)
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) < stop:
            break
        z = r / diag
        rz, rz_old = r @ z, rz
        p = z + (rz / rz_old) * p
    return x, k


def _solve(X, Y, sigma, gamma, tol, max_iter):
    """Maximize the semi-dual in ``g`` (``f = tau T(g)``) by damped Newton-CG.

    The fixed point is that of the (tau-)Sinkhorn map. Convergence is
    declared when one plain Sinkhorn sweep from the current iterate would
    move ``f`` by less than ``tol`` in sup-norm. ``n_iter`` counts work in
    sweeps (two kernel products each).
    """
    eps = 2.0 * sigma ** 2
    tau = 1.0 if np.isinf(gamma) else gamma / (eps + gamma)
    a, b = X.weights, Y.weights
    ker = _Kernel(X.points, Y.points, np.log(a), np.log(b), eps, tau)
    balanced = np.isinf(gamma)
    ez = (lambda g: 0.0) if balanced else (lambda g: (eps / gamma) * b * np.exp(-g / gamma))
    target = (lambda g: b) if balanced else (lambda g: b * np.exp(-g / gamma))

    ker.start()
    g = ker.g_of(np.zeros(X.n))
    f = ker.f_of(g)
    ker.absorb(f, g)
    products = 2
    warm = 0
    err = viol = np.inf
    while products < 2 * max_iter:
        if ker.drift(f, g) > _ABSORB:
            ker.absorb(f, g)
        u, v = ker.u(f), ker.v(g)
        Ktu = ker.K.T @ u
        c = v * Ktu
        grad = target(g) - c
        viol = float(np.abs(grad).sum())
        # stopping test: the f-change of one plain sweep
        with np.errstate(divide="ignore"):
            g2 = tau * (ker.gh - eps * np.log(Ktu))
        if not np.all(np.isfinite(g2)):
            g2 = ker.exact_g(f)
        f2 = ker.f_of(g2)
        err = float(np.abs(f2 - f).max())
        products += 2
        if err < tol:
            return f, g, (products + 1) // 2
        if viol > _WARM_VIOLATION and warm < _WARM_SWEEPS:
            # far from the optimum plain sweeps make faster progress
            warm += 1
            f, g = f2, g2
            continue

        # Hessian (negated, times eps): E + diag(c) - tau P' diag(1/r) P,
        # with a Levenberg-Marquardt shift mu diag(c). Rows of the plan are
        # r = a exp(-f / gamma) because f = tau T(g).
        r = a if balanced else a * np.exp(-f / gamma)
        # rows with negligible mass contribute at most r_i to the Hessian
        live = r > 1e-18 * r.max()
        w = np.zeros_like(r)
        w[live] = u[live] ** 2 / r[live]
        mu = min(1.0, viol)
        base = ez(g) + (1 + mu) * c
        diag = base - tau * v * v * (ker.K2.T @ w)
        diag = np.maximum(diag, 1e-3 * base + 1e-300)
        K = ker.K
        cnt = [0]

        def hess(x):
            cnt[0] += 2
            return base * x - tau * v * (K.T @ (w * (K @ (v * x))))

        step, n_cg = _pcg(hess, eps * grad, diag, min(0.1, np.sqrt(viol)), 200)
        products += cnt[0] // 2 + 1
        if balanced:
            step -= step.mean()
        # backtracking on the semi-dual
        J0 = _semi_dual(f, g, a, b, eps, gamma)
        slope = grad @ step
        t = 1.0
        while t > 1e-8:
            g_new = g + t * step
            f_new = ker.f_of(g_new, exact=False)
            products += 1
            with np.errstate(all="ignore"):
                J1 = _semi_dual(f_new, g_new, a, b, eps, gamma)
            if np.isfinite(J1) and J1 >= J0 + 1e-4 * t * slope - 1e-13 * abs(J0):
                break
            t *= 0.5
        else:
            # no ascent along the Newton direction: take the plain sweep
            g_new, f_new = g2, f2
        logger.debug("newton: change %.3e violation %.3e cg %d step %.3g", err, viol, n_cg, t)
        f, g = f_new, g_new
    raise NotConverged(f"Sinkhorn did not converge within {max_iter} sweeps "
                       f"(last change {err:.3e}, marginal violation {viol:.3e})",
                       residual=viol, best=(f, g), iterations=max_iter)


def _solve_full(X, Y, sigma, gamma, tol, max_iter):
    """Solve on the supported points, then extend the potentials to all points."""
    sa, sb = X.weights > 0, Y.weights > 0
    if sa.all() and sb.all():
        return _solve(X, Y, sigma, gamma, tol, max_iter)
    Xs = DiscreteMeasure(X.points[sa], X.weights[sa])
    Ys = DiscreteMeasure(Y.points[sb], Y.weights[sb])
    f, g, it = _solve(Xs, Ys, sigma, gamma, tol, max_iter)
    eps = 2.0 * sigma ** 2
    tau = 1.0 if np.isinf(gamma) else gamma / (eps + gamma)
    f_all = tau * _c_transform(X.points, Ys.points, np.log(Ys.weights), g, eps)
    g_all = tau * _c_transform(Y.points, Xs.points, np.log(Xs.weights), f, eps)
    f_all[sa], g_all[sb] = f, g
    return f_all, g_all, it


def _check_pair(X, Y):
    if X.dim != Y.dim:
        raise InvalidInput("point clouds have different dimensions")


def sinkhorn_discrete(X, Y, sigma, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Balanced entropic OT between two discrete probability measures.

    Finds the fixed point of the log-domain updates
    ``g_j = -2 sigma^2 log sum_i a_i exp((f_i - |x_i - y_j|^2) / 2 sigma^2)``
    (and symmetrically for ``f``). Stops once one plain update sweep would
    change ``f`` by less than ``tol`` in sup-norm.

    Returns
    -------
    SinkhornResult
        ``(f, g, value, n_iter)`` with ``value = sum a f + sum b g``.

    Raises
    ------
    NotConverged
        Carrying the marginal violation as ``residual``.
    """
    _check_pair(X, Y)
    sigma = check_sigma(sigma)
    for M in (X, Y):
        if abs(M.mass - 1.0) > 1e-9:
            raise InvalidInput(f"balanced Sinkhorn needs unit mass, got {M.mass}")
    f, g, it = _solve_full(X, Y, sigma, np.inf, tol, max_iter)
    return SinkhornResult(f, g, float(X.weights @ f + Y.weights @ g), it)


def sinkhorn_discrete_unbalanced(X, Y, sigma, gamma, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Unbalanced entropic OT (KL marginal penalties of weight ``gamma``).

    Updates are the balanced ones scaled by ``tau = gamma / (2 sigma^2 + gamma)``.
    The transported mass is ``sum_i a_i exp(-f_i / gamma)`` and the value is
    ``gamma (m_a + m_b) + 2 sigma^2 m_a m_b - 2 (sigma^2 + gamma) mass``,
    evaluated in a cancellation-free form.

    Returns
    -------
    UnbalancedSinkhornResult
        ``(f, g, value, mass, n_iter)``.
    """
    _check_pair(X, Y)
    sigma = check_sigma(sigma)
    gamma = check_positive(gamma, "gamma")
    s2 = sigma ** 2
    ma, mb = X.mass, Y.mass
    if ma == 0 or mb == 0:
        # nothing can be transported: all mass is destroyed
        f = np.full(X.n, np.inf)
        g = np.full(Y.n, np.inf)
        return UnbalancedSinkhornResult(f, g, gamma * (ma + mb), 0.0, 0)
    f, g, it = _solve_full(X, Y, sigma, gamma, tol, max_iter)
    mass = float(X.weights @ np.exp(-f / gamma))
    # gamma (m_a - mass) + gamma (m_b - mass) + 2 s2 (m_a m_b - mass), using
    # the two (equal at optimum) marginal forms of the mass
    lost_a = float(X.weights @ -np.expm1(-f / gamma))
    lost_b = float(Y.weights @ -np.expm1(-g / gamma))
    value = gamma * (lost_a + lost_b) + 2 * s2 * (ma * mb - mass)
    return UnbalancedSinkhornResult(f, g, float(value), mass, it)


def _plan_blocks(f, g, X, Y, sigma):
    eps = 2.0 * sigma ** 2
    a, b = X.weights, Y.weights
    m = Y.n
    step = max(1, _BLOCK // max(m, 1))
    with np.errstate(divide="ignore"):
        la, lb = np.log(a), np.log(b)
    for s in range(0, X.n, step):
        C = cost_matrix(X.points[s:s + step], Y.points)
        P = (la[s:s + step] + f[s:s + step] / eps)[:, None] + (lb + g / eps)[None, :] - C / eps
        yield s, np.exp(P, out=P)


def plan_moments(f, g, X, Y, sigma):
    """Mass, mean and covariance of the discrete plan
    ``P_ij = a_i b_j exp((f_i + g_j - |x_i - y_j|^2) / 2 sigma^2)``.

    Returns
    -------
    mass : float
    mean : ndarray, shape (2d,)
    cov : ndarray, shape (2d, 2d)
    """
    _check_pair(X, Y)
    sigma = check_sigma(sigma)
    d = X.dim
    r = np.zeros(X.n)
    c = np.zeros(Y.n)
    cross = np.zeros((d, d))
    for s, P in _plan_blocks(f, g, X, Y, sigma):
        rows = P.sum(axis=1)
        r[s:s + len(rows)] = rows
        c += P.sum(axis=0)
        cross += X.points[s:s + len(rows)].T @ (P @ Y.points)
    mass = float(r.sum())
    mx = r @ X.points / mass
    my = c @ Y.points / mass
    cxx = (X.points * r[:, None]).T @ X.points / mass - np.outer(mx, mx)
    cyy = (Y.points * c[:, None]).T @ Y.points / mass - np.outer(my, my)
    cxy = cross / mass - np.outer(mx, my)
    cov = np.block([[cxx, cxy], [cxy.T, cyy]])
    return mass, np.concatenate([mx, my]), 0.5 * (cov + cov.T)


def plan_histogram(f, g, X, Y, sigma, bins=200, range_=None):
    """2d histogram of the discrete plan weights (1d measures only).

    Returns
    -------
    H : ndarray, shape (bins, bins)
        Plan mass per (x-bin, y-bin) cell; sums to the plan mass.
    xedges, yedges : ndarray, shape (bins + 1,)

    Raises
    ------
    Unsupported
        If the points are not one-dimensional.
    """
    _check_pair(X, Y)
    if X.dim != 1:
        raise Unsupported("plan histograms are only defined for d = 1")
    sigma = check_sigma(sigma)
    x, y = X.points[:, 0], Y.points[:, 0]
    if range_ is None:
        pad = lambda v: (v.min() - 1e-9 * (1 + abs(v.min())), v.max() + 1e-9 * (1 + abs(v.max())))
        range_ = (pad(x), pad(y))
    H = np.zeros((bins, bins))
    xedges = yedges = None
    for s, P in _plan_blocks(f, g, X, Y, sigma):
        xs = np.repeat(x[s:s + P.shape[0]], Y.n)
        ys = np.tile(y, P.shape[0])
        h, xedges, yedges = np.histogram2d(xs, ys, bins=bins, range=range_, weights=P.ravel())
        H += h
    return H, xedges, yedges


# ---------------------------------------------------------------- experiments

@dataclass(frozen=True)
class ExperimentConfig:
    """Protocol for the convergence experiments.

    Each ``(mass_beta, gamma)`` entry of ``cells`` is run for every
    dimension; ``gamma = inf`` means balanced OT (unit masses required).
    One Gaussian pair is drawn per dimension and shared by all cells,
    sample sizes and trials.
    """

    dims: Sequence[int] = (5, 10)
    ns: Sequence[int] = (100, 500, 2000, 5000)
    sigma: float = 0.5
    cells: Sequence[tuple] = ((1.0, float("inf")), (2.0, 1.0))
    mass_alpha: float = 1.0
    trials: int = 20
    base_seed: int = 0
    wishart_scale: float = 0.2
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER

    @classmethod
    def from_epsilon(cls, epsilon, **kw):
        """Build from ``epsilon = 2 sigma^2``."""
        return cls(sigma=float(np.sqrt(check_positive(epsilon, "epsilon") / 2.0)), **kw)

    def metadata(self):
        meta = asdict(self)
        meta["cells"] = [list(c) for c in self.cells]
        meta.update(epsilon=2 * self.sigma ** 2, rng=RNG_ALGORITHM,
                    seed_rule="trial seed = base_seed + blake2b-32(d, n, trial)")
        return meta


def stable_hash(*parts):
    """Platform-independent 32-bit hash of integers."""
    key = ",".join(str(int(p)) for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=4).digest(), "big")


def trial_seed(base_seed, d, n, trial):
    return (int(base_seed) + stable_hash(d, n, trial)) % 2 ** 63


def experiment_pair(config, d):
    """The Gaussian pair (unit masses) used for dimension ``d``."""
    rng = SeededRng((int(config.base_seed) + stable_hash(d, 0, -1)) % 2 ** 63)
    gen = rng.generator()
    a = gen.uniform(-1, 1, d)
    b = gen.uniform(-1, 1, d)
    # independent sub-streams for the covariances
    A = sample_wishart(d, config.wishart_scale, d, SeededRng(rng.seed + 1))
    B = sample_wishart(d, config.wishart_scale, d, SeededRng(rng.seed + 2))
    return Gaussian(a, A), Gaussian(b, B)


def _scaled(g, mass):
    return Gaussian(g.mean, g.cov, mass)


def _closed_form(alpha, beta, sigma, gamma):
    if np.isinf(gamma):
        return ot_sigma(alpha, beta, sigma)
    return uot(alpha, beta, UnbalancedParams(sigma, gamma))


def _samples(alpha, beta, n, seed):
    Xs = sample_gaussian(alpha, n, SeededRng(seed))
    Ys = sample_gaussian(beta, n, SeededRng(seed + 2 ** 62))
    return Xs, Ys


def _run_value(task):
    config, alpha, beta, d, n, trial, gamma = task
    seed = trial_seed(config.base_seed, d, n, trial)
    Xs, Ys = _samples(alpha, beta, n, seed)
    if np.isinf(gamma):
        emp = sinkhorn_discrete(Xs, Ys, config.sigma, config.tol, config.max_iter).value
    else:
        emp = sinkhorn_discrete_unbalanced(Xs, Ys, config.sigma, gamma, config.tol, config.max_iter).value
    return ExperimentRow(d, n, trial, config.sigma, gamma, alpha.mass, beta.mass,
                         float(emp), _closed_form(alpha, beta, config.sigma, gamma), seed)


def _rel_inf(x, ref):
    return float(np.abs(x - ref).max() / np.abs(ref).max())


def _run_moments(task):
    config, alpha, beta, d, n, trial, gamma = task
    seed = trial_seed(config.base_seed, d, n, trial)
    Xs, Ys = _samples(alpha, beta, n, seed)
    res = sinkhorn_discrete_unbalanced(Xs, Ys, config.sigma, gamma, config.tol, config.max_iter)
    mass, mean, cov = plan_moments(res.f, res.g, Xs, Ys, config.sigma)
    plan = unbalanced_plan(alpha, beta, UnbalancedParams(config.sigma, gamma))
    return MomentRow(d, n, trial, config.sigma, gamma, alpha.mass, beta.mass,
                     _rel_inf(mean, plan.mean), _rel_inf(cov, plan.cov),
                     abs(mass - plan.mass) / plan.mass, seed)


def _n_workers(n_tasks):
    env = os.environ.get("GAUSS_EOT_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, n_tasks))


def _tasks(config, need_unbalanced=False):
    tasks = []
    for d in config.dims:
        alpha, beta = experiment_pair(config, d)
        alpha = _scaled(alpha, config.mass_alpha)
        for mass_beta, gamma in config.cells:
            gamma = float(gamma)
            if np.isinf(gamma) and (mass_beta != 1 or config.mass_alpha != 1):
                raise InvalidInput("balanced cells (gamma = inf) need unit masses")
            if need_unbalanced and np.isinf(gamma):
                raise InvalidInput("plan moment experiments need a finite gamma")
            for n in config.ns:
                for trial in range(config.trials):
                    tasks.append((config, alpha, _scaled(beta, mass_beta), d, n, trial, gamma))
    return tasks


def _map(fn, tasks, workers):
    if workers is None:
        workers = _n_workers(len(tasks))
    if workers <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=1))


def _sort_key(row):
    return (row.d, row.mass_beta, row.gamma, row.n, row.trial)


def convergence_experiment(config, workers=None):
    """Empirical vs closed-form entropic OT values over a grid of sample sizes.

    Returns one :class:`ExperimentRow` per (d, cell, n, trial), sorted by
    that key. Trials run in parallel processes, capped by the
    ``GAUSS_EOT_THREADS`` environment variable; results do not depend on
    the number of workers.
    """
    return sorted(_map(_run_value, _tasks(config), workers), key=_sort_key)


def moment_experiment(config, workers=None):
    """Relative sup-norm errors of the empirical unbalanced plan's mean and
    covariance against their closed forms, one :class:`MomentRow` per run."""
    return sorted(_map(_run_moments, _tasks(config, need_unbalanced=True), workers), key=_sort_key)


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def rows_to_csv(rows, columns=CSV_COLUMNS):
    """Serialize rows as CSV text (header included, numbers at 17 significant digits)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in columns])
    return buf.getvalue()


def write_csv(rows, path, columns=CSV_COLUMNS):
    with open(path, "w", newline="") as fh:
        fh.write(rows_to_csv(rows, columns))
