r"""Unbalanced entropic OT between scaled Gaussians.

Marginal constraints are replaced by ``gamma * KL`` penalties, so the
measures ``m_a N(a, A)`` and ``m_b N(b, B)`` may carry different masses.
The optimal plan is again a scaled Gaussian on the product space, with
mass, mean and covariance in closed form. All closed forms use

* ``tau = gamma / (2 sigma^2 + gamma)``
* ``lam = sigma^2 + gamma / 2 = sigma^2 / (1 - tau)``
* ``A~ = gamma/2 (I - lam (A + lam I)^{-1})`` and likewise ``B~``.

Potentials follow the convention of :mod:`.quadform`: the scaled dual
potential ``f / (2 sigma^2)`` is ``-(x'Ux - 2u'x)/2 + log m_u``.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from ._errors import InvalidInput, NotPositiveDefinite, NumericalInconsistency, SingularMatrix
from .gaussian_ot import Gaussian, as_psd
from .linalg import _eigh, _fun, _sqrtm, _sym
from .quadform import QuadPotential, log_gaussian_integral
from .validation import check_positive, check_same_dim, check_sigma, is_singular


@dataclass(frozen=True)
class UnbalancedParams:
    """Regularization ``sigma`` and marginal penalty ``gamma``."""

    sigma: float
    gamma: float

    def __post_init__(self):
        object.__setattr__(self, "sigma", check_sigma(self.sigma))
        object.__setattr__(self, "gamma", check_positive(self.gamma, "gamma"))

    @property
    def tau(self):
        return self.gamma / (2 * self.sigma ** 2 + self.gamma)

    @property
    def lam(self):
        return self.sigma ** 2 + 0.5 * self.gamma


@dataclass(frozen=True)
class UnbalancedPlan:
    """Scaled Gaussian plan ``mass * N(mean, cov)`` on the product space."""

    mass: float
    mean: np.ndarray
    cov: np.ndarray

    @property
    def dim(self):
        return self.mean.shape[0] // 2

    @property
    def log_mass(self):
        return float(np.log(self.mass)) if self.mass > 0 else -np.inf

    def scaled_precision(self, sigma):
        """``sigma^2 * cov^{-1}``, equal to ``[[F, -I], [-I, G]]``."""
        return sigma ** 2 * np.linalg.inv(self.cov)


@dataclass(frozen=True)
class UnbalancedDuals:
    """Quadratic dual potentials ``f/(2 sigma^2) = Q(U, u) + log m_u``, ``g`` likewise."""

    U: np.ndarray
    u: np.ndarray
    log_mu: float
    V: np.ndarray
    v: np.ndarray
    log_mv: float
    F: np.ndarray
    G: np.ndarray

    @property
    def log_mu_mv(self):
        return self.log_mu + self.log_mv

    @property
    def f(self):
        return QuadPotential(self.U, self.u, self.log_mu)

    @property
    def g(self):
        return QuadPotential(self.V, self.v, self.log_mv)


def _inv_pd(M, name):
    try:
        cf = sla.cho_factor(M, lower=True, check_finite=False)
    except sla.LinAlgError as err:
        raise SingularMatrix(f"{name} must be positive definite") from err
    return _sym(sla.cho_solve(cf, np.eye(M.shape[0]))), 2.0 * float(np.sum(np.log(np.diag(cf[0]))))


def tilde_transform(A, params):
    r""":math:`\tilde A = \tfrac{\gamma}{2}(I - \lambda (A + \lambda I)^{-1})`.

    Computed on the spectrum as :math:`a \mapsto \tfrac{\gamma}{2}\,a/(a + \lambda)`,
    which equals :math:`\tau (A^{-1} + I/\lambda)^{-1}` for positive definite A.
    """
    A = as_psd(A, "A")
    w, V = _eigh(A)
    w = np.clip(w, 0.0, None)
    lam = params.lam
    return _fun(w, V, lambda x: 0.5 * params.gamma * x / (x + lam))


def unbalanced_C(A_tilde, B_tilde, params):
    r""":math:`C = (\tilde A\tilde B/\tau + \sigma^4/4\,I)^{1/2} - \sigma^2/2\,I`.

    The square root of the non-symmetric product is taken through a
    similarity with a symmetric matrix when ``A~`` or ``B~`` is positive
    definite, and with :func:`scipy.linalg.sqrtm` otherwise.
    """
    At = as_psd(A_tilde, "A_tilde")
    Bt = as_psd(B_tilde, "B_tilde")
    d = check_same_dim(At, Bt)
    tau, s2 = params.tau, params.sigma ** 2
    q = 0.25 * s2 ** 2 * np.eye(d)
    for P, Q, left in ((At, Bt, True), (Bt, At, False)):
        w, V = _eigh(P)
        if w.min() > 1e-12 * max(w.max(), 1e-300):
            rP = _fun(w, V, np.sqrt)
            irP = _fun(w, V, lambda x: 1.0 / np.sqrt(x))
            S = _sqrtm(rP @ Q @ rP / tau + q)
            # A~B~ = A~^1/2 (A~^1/2 B~ A~^1/2) A~^-1/2, and B~^-1/2 (..) B~^1/2 for the other side
            R = rP @ S @ irP if left else irP @ S @ rP
            return R - 0.5 * s2 * np.eye(d)
    R = sla.sqrtm(At @ Bt / tau + q)
    return np.real(R) - 0.5 * s2 * np.eye(d)


def _setup(alpha, beta, params):
    A, B = alpha.cov, beta.cov
    d = check_same_dim(A, B)
    for M, name in ((A, "alpha covariance"), (B, "beta covariance")):
        if is_singular(np.linalg.eigvalsh(M)):
            raise SingularMatrix(f"{name} must be positive definite")
    At = tilde_transform(A, params)
    Bt = tilde_transform(B, params)
    C = unbalanced_C(At, Bt, params)
    return d, A, B, At, Bt, C


def _log_mass(alpha, beta, params, d, A, B, At, Bt, C, Xinv):
    s2, gamma, tau = params.sigma ** 2, params.gamma, params.tau
    sign_c, ld_c = np.linalg.slogdet(C)
    sign_k, ld_k = np.linalg.slogdet(C - (2.0 / gamma) * At @ Bt)
    if sign_c <= 0 or sign_k <= 0:
        raise NumericalInconsistency("det(C - (2/gamma) A~B~) is not positive")
    ld_tilde = np.linalg.slogdet(At)[1] + np.linalg.slogdet(Bt)[1]
    ld_ab = np.linalg.slogdet(A)[1] + np.linalg.slogdet(B)[1]
    diff = alpha.mean - beta.mean
    return (d * s2 / (gamma + s2) * np.log(params.sigma)
            + (np.log(alpha.mass) + np.log(beta.mass) + ld_c + 0.5 * (tau * ld_tilde - ld_ab)) / (tau + 1)
            - float(diff @ Xinv @ diff) / (2 * (tau + 1))
            - 0.5 * ld_k)


def unbalanced_plan(alpha, beta, params):
    r"""Closed-form optimal plan of unbalanced entropic OT.

    With ``X = A + B + lam I``:

    * mean ``(a + A X^{-1}(b - a), b + B X^{-1}(a - b))``
    * covariance with blocks ``(I + C/lam)(A - A X^{-1} A)`` and
      ``C + (I + C/lam) A X^{-1} B`` (and their mirror images)
    * mass evaluated in log space.

    Parameters
    ----------
    alpha, beta : Gaussian
        Scaled Gaussians with positive definite covariances.
    params : UnbalancedParams

    Returns
    -------
    UnbalancedPlan

    Raises
    ------
    NumericalInconsistency
        If a determinant that must be positive is not.
    """
    d, A, B, At, Bt, C = _setup(alpha, beta, params)
    lam = params.lam
    eye = np.eye(d)
    Xinv, _ = _inv_pd(A + B + lam * eye, "A + B + lam I")
    a, b = alpha.mean, beta.mean
    mean = np.concatenate([a + A @ Xinv @ (b - a), b + B @ Xinv @ (a - b)])
    L, R = eye + C / lam, eye + C.T / lam
    H = np.block([[L @ (A - A @ Xinv @ A), C + L @ A @ Xinv @ B],
                  [C.T + R @ B @ Xinv @ A, R @ (B - B @ Xinv @ B)]])
    if np.abs(H - H.T).max() > 1e-9 * max(np.abs(H).max(), 1.0):
        raise NumericalInconsistency("assembled plan covariance is not symmetric")
    H = _sym(H)
    if np.linalg.eigvalsh(H)[0] <= 0:
        raise NumericalInconsistency("plan covariance is not positive definite")
    log_m = _log_mass(alpha, beta, params, d, A, B, At, Bt, C, Xinv)
    return UnbalancedPlan(float(np.exp(log_m)), mean, H)


def uot(alpha, beta, params, plan=None):
    """Unbalanced entropic OT value from the transported mass.

    ``gamma (m_a + m_b) + 2 sigma^2 m_a m_b - 2 (sigma^2 + gamma) m_pi``
    """
    if plan is None:
        plan = unbalanced_plan(alpha, beta, params)
    s2, gamma = params.sigma ** 2, params.gamma
    ma, mb = alpha.mass, beta.mass
    return float(gamma * (ma + mb) + 2 * s2 * ma * mb - 2 * (s2 + gamma) * plan.mass)


def unbalanced_duals(alpha, beta, params):
    r"""Recover the optimal quadratic dual potentials.

    ``F = B~ C^{-1}`` and ``G = C^{-1} A~`` give the quadratic parts
    ``U = (F - I)/sigma^2 - A^{-1}`` and ``V = (G - I)/sigma^2 - B^{-1}``.
    The linear parts solve ``u = -tau G^{-1}(B^{-1} b + v)`` and
    ``v = -tau F^{-1}(A^{-1} a + u)``; the two log-constants solve the
    analogous 2x2 system, which is non-singular for ``tau < 1``.

    Returns
    -------
    UnbalancedDuals
    """
    d, A, B, At, Bt, C = _setup(alpha, beta, params)
    s2, tau = params.sigma ** 2, params.tau
    eye = np.eye(d)
    Ainv, ld_a = _inv_pd(A, "alpha covariance")
    Binv, ld_b = _inv_pd(B, "beta covariance")
    F = Bt @ np.linalg.inv(C)
    G = np.linalg.solve(C, At)
    for M in (F, G):
        if np.abs(M - M.T).max() > 1e-8 * max(np.abs(M).max(), 1.0):
            raise NumericalInconsistency("recovered dual matrix is not symmetric")
    F, G = _sym(F), _sym(G)
    Finv, ld_f = _inv_pd(F, "F")
    Ginv, ld_g = _inv_pd(G, "G")
    U = _sym((F - eye) / s2 - Ainv)
    V = _sym((G - eye) / s2 - Binv)

    a, b = alpha.mean, beta.mean
    Aa, Bb = Ainv @ a, Binv @ b
    K = np.block([[eye, tau * Ginv], [tau * Finv, eye]])
    rhs = np.concatenate([-tau * Ginv @ Bb, -tau * Finv @ Aa])
    try:
        uv = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError as err:
        raise NumericalInconsistency("linear dual system is singular") from err
    u, v = uv[:d], uv[d:]

    # log m_v = -tau (log m_u + k_a), log m_u = -tau (log m_v + k_b)
    def k(mass, ld_m, ld_t, mvec, Minv_m, Tinv, p):
        return (np.log(mass) - 0.5 * ld_m - 0.5 * ld_t + d * np.log(params.sigma)
                - 0.5 * float(mvec @ Minv_m) + 0.5 * s2 * float(p @ Tinv @ p))

    k_a = k(alpha.mass, ld_a, ld_f, a, Aa, Finv, u + Aa)
    k_b = k(beta.mass, ld_b, ld_g, b, Bb, Ginv, v + Bb)
    log_mu = (tau ** 2 * k_a - tau * k_b) / (1 - tau ** 2)
    log_mv = -tau * (log_mu + k_a)
    return UnbalancedDuals(U, u, float(log_mu), V, v, float(log_mv), F, G)


def plan_from_duals(duals, alpha, beta, params):
    r"""Plan ``exp(f/2s2 + g/2s2 - |x - y|^2 / 2s2) d(alpha x beta)`` as a scaled Gaussian."""
    d = alpha.dim
    s2 = params.sigma ** 2
    eye = np.eye(d)
    Ainv, ld_a = _inv_pd(alpha.cov, "alpha covariance")
    Binv, ld_b = _inv_pd(beta.cov, "beta covariance")
    a, b = alpha.mean, beta.mean
    Gamma = np.block([[duals.U + Ainv + eye / s2, -eye / s2],
                      [-eye / s2, duals.V + Binv + eye / s2]])
    try:
        cf = sla.cho_factor(_sym(Gamma), lower=True)
    except sla.LinAlgError as err:
        raise NotPositiveDefinite("plan precision is not positive definite") from err
    H = _sym(sla.cho_solve(cf, np.eye(2 * d)))
    lin = np.concatenate([duals.u + Ainv @ a, duals.v + Binv @ b])
    mean = H @ lin
    ld_gamma = 2.0 * float(np.sum(np.log(np.diag(cf[0]))))
    log_m = (duals.log_mu + duals.log_mv + np.log(alpha.mass) + np.log(beta.mass)
             - 0.5 * (ld_a + ld_b + ld_gamma)
             - 0.5 * float(a @ Ainv @ a) - 0.5 * float(b @ Binv @ b) + 0.5 * float(lin @ mean))
    return UnbalancedPlan(float(np.exp(log_m)), mean, H)


def uot_dual_objective(duals, alpha, beta, params):
    r"""Dual objective of unbalanced entropic OT at quadratic potentials.

    .. math::
        \gamma\!\int(1 - e^{-f/\gamma})\,d\alpha + \gamma\!\int(1 - e^{-g/\gamma})\,d\beta
        - 2\sigma^2\Big(\iint e^{(f + g - c)/2\sigma^2} d\alpha\, d\beta - m_\alpha m_\beta\Big)
    """
    s2, gamma = params.sigma ** 2, params.gamma
    k = 2 * s2 / gamma

    def neg_scaled(h):
        return QuadPotential(-k * h.U, -k * h.u, -k * h.log_m)

    ea = np.exp(log_gaussian_integral(neg_scaled(duals.f), alpha))
    eb = np.exp(log_gaussian_integral(neg_scaled(duals.g), beta))
    m_pi = plan_from_duals(duals, alpha, beta, params).mass
    ma, mb = alpha.mass, beta.mass
    return float(gamma * (ma - ea) + gamma * (mb - eb) - 2 * s2 * (m_pi - ma * mb))
