r"""Debiased entropic barycenter of Gaussians.

The barycenter of unit-mass Gaussians N(a_k, A_k) with weights w_k is
N(sum_k w_k a_k, B) where B solves

.. math::
    \sum_k w_k (B^{1/2} A_k B^{1/2} + \tfrac{\sigma^4}{4} I)^{1/2}
    = (B^2 + \tfrac{\sigma^4}{4} I)^{1/2}.

:func:`debiased_barycenter` finds B by a damped fixed-point iteration.
"""

from dataclasses import dataclass

import numpy as np

from ._errors import InvalidInput, NotConverged
from .gaussian_ot import Gaussian, as_psd, require_unit_mass
from .linalg import _eigh, _fun, _sqrtm, _sym
from .validation import check_sigma


@dataclass(frozen=True)
class BarycenterProblem:
    """Weighted set of unit-mass Gaussians and a regularization level.

    Parameters
    ----------
    weights : array_like, shape (K,)
        Positive weights summing to 1 (within 1e-12).
    components : sequence of Gaussian
    sigma : float
    """

    weights: np.ndarray
    components: tuple
    sigma: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        comps = tuple(self.components)
        if len(comps) == 0 or w.shape[0] != len(comps):
            raise InvalidInput("need one weight per component and at least one component")
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise InvalidInput("weights must be positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise InvalidInput(f"weights must sum to 1, got {w.sum()!r}")
        require_unit_mass(*comps)
        if len({g.dim for g in comps}) != 1:
            raise InvalidInput("components have different dimensions")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "sigma", check_sigma(self.sigma))

    @property
    def dim(self):
        return self.components[0].dim

    @property
    def mean(self):
        return sum(w * g.mean for w, g in zip(self.weights, self.components))

    @property
    def euclidean_mean_cov(self):
        return _sym(sum(w * g.cov for w, g in zip(self.weights, self.components)))


def _weighted_roots(B, problem):
    # sum_k w_k (B^1/2 A_k B^1/2 + s^4/4 I)^1/2
    q = 0.25 * problem.sigma ** 4 * np.eye(problem.dim)
    rB = _sqrtm(B)
    return sum(w * _sqrtm(rB @ g.cov @ rB + q) for w, g in zip(problem.weights, problem.components))


def _rhs(B, sigma):
    w, V = _eigh(_sym(B))
    return _fun(w, V, lambda x: np.sqrt(x * x + 0.25 * sigma ** 4))


def barycenter_residual(B, problem):
    """Frobenius norm of the gap between the two sides of the barycenter equation."""
    B = as_psd(B, "B")
    return float(np.linalg.norm(_weighted_roots(B, problem) - _rhs(B, problem.sigma)))


def barycenter_map(B, problem):
    r"""Fixed-point map :math:`T(B) = (S(B)^2 - \sigma^4/4\,I)^{1/2}`, S the weighted root sum."""
    S = _weighted_roots(B, problem)
    return _sqrtm(S @ S - 0.25 * problem.sigma ** 4 * np.eye(problem.dim))


def barycenter_gradient(B, problem):
    r"""First-order optimality matrix :math:`\sum_k w_k C_k B^{-1} - J^{-1} B`.

    Here :math:`C_k = (A_k B + \sigma^4/4)^{1/2} - \sigma^2/2` is the cross
    covariance of the plan from A_k to B and
    :math:`J = (B^2 + \sigma^4/4)^{1/2} + \sigma^2/2`. It vanishes at the
    barycenter. B must be positive definite.
    """
    B = as_psd(B, "B")
    s2 = problem.sigma ** 2
    eye = np.eye(problem.dim)
    w, V = _eigh(B)
    rB = _fun(w, V, np.sqrt)
    irB = _fun(w, V, lambda x: 1.0 / np.sqrt(x))
    Binv = _fun(w, V, lambda x: 1.0 / x)
    total = np.zeros_like(B)
    for wk, g in zip(problem.weights, problem.components):
        # (A_k B + q)^1/2 = B^-1/2 (B^1/2 A_k B^1/2 + q)^1/2 B^1/2
        Ck = irB @ _sqrtm(rB @ g.cov @ rB + 0.25 * s2 ** 2 * eye) @ rB - 0.5 * s2 * eye
        total += wk * Ck @ Binv
    J = _fun(w, V, lambda x: np.sqrt(x * x + 0.25 * s2 ** 2) + 0.5 * s2)
    return total - np.linalg.solve(J, B)


def debiased_barycenter(problem, tol=1e-10, max_iter=1000, damping=1.0):
    r"""Debiased Sinkhorn barycenter by damped fixed-point iteration.

    Starts from the Euclidean mean ``B0 = sum_k w_k A_k`` and iterates
    ``B <- (1 - eta) B + eta T(B)``. The step ``eta`` starts at ``damping``
    and is halved, down to 1/8, whenever the residual grows on two
    consecutive iterations.

    Parameters
    ----------
    problem : BarycenterProblem
    tol : float, default 1e-10
        Target residual, relative to ``tr(B0)``.
    max_iter : int, default 1000
    damping : float in (0, 1], default 1.0

    Returns
    -------
    barycenter : Gaussian
    residual : float
        Absolute Frobenius residual of the barycenter equation.
    n_iter : int

    Raises
    ------
    NotConverged
        With the best iterate (a Gaussian) and its residual attached.
    """
    if not 0 < damping <= 1:
        raise InvalidInput("damping must lie in (0, 1]")
    B = problem.euclidean_mean_cov
    mean = problem.mean
    target = tol * max(float(np.trace(B)), np.finfo(float).tiny)
    res = barycenter_residual(B, problem)
    best = (res, B)
    eta = float(damping)
    n_up = 0
    it = 0
    while res > target and it < max_iter:
        it += 1
        B = _sym((1 - eta) * B + eta * barycenter_map(B, problem))
        new = barycenter_residual(B, problem)
        n_up = n_up + 1 if new > res else 0
        if n_up >= 2 and eta > 0.125:
            eta = max(eta / 2, 0.125)
            n_up = 0
        res = new
        if res < best[0]:
            best = (res, B)
    if res > target:
        raise NotConverged(f"barycenter residual {best[0]:.3e} above {target:.3e} "
                           f"after {max_iter} iterations", residual=best[0],
                           best=Gaussian(mean, best[1]), iterations=it)
    return Gaussian(mean, B), res, it
