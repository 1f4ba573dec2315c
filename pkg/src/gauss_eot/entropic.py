r"""Entropy-regularized OT between Gaussians, in closed form.

Conventions: the regularization is :math:`2\sigma^2\,\mathrm{KL}(\pi\,\|\,\alpha\otimes\beta)`,
i.e. ``epsilon = 2 * sigma**2`` in the usual Sinkhorn notation. Every
function here takes ``sigma``.

Value and gradient (:func:`bures_sigma_sq`, :func:`grad_bures_sigma`) accept
singular PSD covariances. The plan and the matrix Sinkhorn pair need
positive definite covariances; :func:`plan_closed_form` has an opt-in ridge.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla
from scipy.linalg import lapack

from ._errors import (InfeasibleDual, InfeasiblePrimal, InvalidInput, NotConverged,
                      NotPositiveDefinite, SingularMatrix)
from .gaussian_ot import Gaussian, as_psd, require_unit_mass
from .linalg import _eigh, _fun, _sqrtm, _sym, threshold_psd
from .validation import check_same_dim, check_sigma, is_singular


def _pair(A, B):
    A = as_psd(A, "A")
    B = as_psd(B, "B")
    check_same_dim(A, B)
    return A, B


def _inv_pd(M, name="matrix", exc=SingularMatrix):
    try:
        cf = sla.cho_factor(M, lower=True, check_finite=False)
    except sla.LinAlgError as err:
        raise exc(f"{name} is not positive definite") from err
    return _sym(sla.cho_solve(cf, np.eye(M.shape[0])))


def _logdet_chol(M, name="matrix", exc=NotPositiveDefinite):
    try:
        L = sla.cholesky(_sym(M), lower=True, check_finite=False)
    except sla.LinAlgError as err:
        raise exc(f"{name} is not positive definite") from err
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def _sqrt_and_invsqrt(A, name="A"):
    w, V = _eigh(A)
    if is_singular(w):
        raise SingularMatrix(f"{name} is singular; pass ridge > 0 to regularize")
    return _fun(w, V, np.sqrt), _fun(w, V, lambda x: 1.0 / np.sqrt(x))


@dataclass(frozen=True)
class EntropicPlan:
    """Gaussian coupling ``N(mean, cov)`` on the product space.

    ``cov`` has blocks ``[[A, C], [C.T, B]]``; ``C`` is generally not
    symmetric.
    """

    mean: np.ndarray
    cov: np.ndarray
    sigma: float

    @property
    def dim(self):
        return self.mean.shape[0] // 2

    @property
    def A(self):
        d = self.dim
        return self.cov[:d, :d]

    @property
    def B(self):
        d = self.dim
        return self.cov[d:, d:]

    @property
    def C(self):
        d = self.dim
        return self.cov[:d, d:]

    def scaled_precision(self):
        """``sigma^2 * cov^{-1}``, whose off-diagonal blocks are ``-I``."""
        return self.sigma ** 2 * np.linalg.inv(self.cov)


@dataclass(frozen=True)
class SinkhornPair:
    """Positive definite fixed point ``(F, G)`` of the matrix Sinkhorn map."""

    F: np.ndarray
    G: np.ndarray


def d_sigma(A, B, sigma):
    r""":math:`D_\sigma = (4 A^{1/2} B A^{1/2} + \sigma^4 I)^{1/2}`."""
    A, B = _pair(A, B)
    sigma = check_sigma(sigma)
    rA = _sqrtm(A)
    return _sqrtm(4 * rA @ B @ rA + sigma ** 4 * np.eye(A.shape[0]))


def bures_sigma_sq(A, B, sigma):
    r"""Entropic Bures term of OT_sigma between N(a, A) and N(b, B).

    .. math::
        \mathrm{tr}A + \mathrm{tr}B - \mathrm{tr}D_\sigma
        + d\sigma^2(1 - \log 2\sigma^2) + \sigma^2 \log\det(D_\sigma + \sigma^2 I)

    Well defined for singular PSD inputs.
    """
    A, B = _pair(A, B)
    sigma = check_sigma(sigma)
    d = A.shape[0]
    s2 = sigma ** 2
    D = d_sigma(A, B, sigma)
    w = np.linalg.eigvalsh(D)
    return float(np.trace(A) + np.trace(B) - np.sum(w)
                 + d * s2 * (1 - np.log(2 * s2)) + s2 * np.sum(np.log(w + s2)))


def ot_sigma(alpha, beta, sigma):
    """Entropic OT value ``||a - b||^2 + bures_sigma_sq(A, B, sigma)`` for unit masses."""
    require_unit_mass(alpha, beta)
    diff = alpha.mean - beta.mean
    return float(diff @ diff) + bures_sigma_sq(alpha.cov, beta.cov, sigma)


def cross_cov(A, B, sigma, ridge=0.0):
    r"""Cross-covariance of the optimal plan.

    :math:`C_\sigma = A^{1/2}(A^{1/2} B A^{1/2} + \sigma^4/4\,I)^{1/2} A^{-1/2} - \sigma^2/2\,I`,
    the root of :math:`C^2 + \sigma^2 C - AB = 0` with positive spectrum.
    """
    A, B = _pair(A, B)
    sigma = check_sigma(sigma)
    d = A.shape[0]
    if ridge:
        A = A + ridge * np.eye(d)
        B = B + ridge * np.eye(d)
    rA, irA = _sqrt_and_invsqrt(A)
    s4 = sigma ** 4
    return rA @ _sqrtm(rA @ B @ rA + 0.25 * s4 * np.eye(d)) @ irA - 0.5 * sigma ** 2 * np.eye(d)


def plan_closed_form(alpha, beta, sigma, ridge=0.0):
    """Optimal entropic plan between two unit-mass Gaussians.

    Parameters
    ----------
    alpha, beta : Gaussian
    sigma : float
    ridge : float, default 0
        Jitter added to both covariances; needed when one is singular.

    Returns
    -------
    EntropicPlan

    Raises
    ------
    SingularMatrix
        If a covariance is singular and ``ridge`` is 0.
    """
    require_unit_mass(alpha, beta)
    sigma = check_sigma(sigma)
    if ridge < 0:
        raise InvalidInput("ridge must be non-negative")
    d = check_same_dim(alpha.cov, beta.cov)
    A = alpha.cov + ridge * np.eye(d)
    B = beta.cov + ridge * np.eye(d)
    _sqrt_and_invsqrt(B, "B")
    C = cross_cov(A, B, sigma)
    cov = np.block([[A, C], [C.T, B]])
    return EntropicPlan(np.concatenate([alpha.mean, beta.mean]), cov, sigma)


def _half_dual(A, B, sigma):
    # (B^1/2 ((B^1/2 A B^1/2 + s^4/4)^1/2 + s^2/2)^-1 B^1/2 - I) / s^2
    d = A.shape[0]
    s2 = sigma ** 2
    rB = _sqrtm(B)
    M = _sqrtm(rB @ A @ rB + 0.25 * s2 ** 2 * np.eye(d)) + 0.5 * s2 * np.eye(d)
    return _sym(rB @ _inv_pd(M) @ rB - np.eye(d)) / s2


def dual_potentials(A, B, sigma):
    r"""Quadratic coefficients of the optimal Sinkhorn potentials.

    For centred measures ``f / (2 sigma^2) = -x'Ux/2`` and
    ``g / (2 sigma^2) = -y'Vy/2`` up to additive constants, with

    .. math::
        U = \frac{1}{\sigma^2}\left(B^{1/2}\big((B^{1/2}AB^{1/2} + \tfrac{\sigma^4}{4})^{1/2}
        + \tfrac{\sigma^2}{2}\big)^{-1}B^{1/2} - I\right)

    and ``V`` symmetrically. This symmetric form equals
    ``(B (C + sigma^2 I)^{-1} - I) / sigma^2`` and stays valid for singular inputs.

    Returns
    -------
    U, V : ndarray, shape (d, d)
    """
    A, B = _pair(A, B)
    sigma = check_sigma(sigma)
    return _half_dual(A, B, sigma), _half_dual(B, A, sigma)


def closed_form_pair(A, B, sigma):
    """Closed-form fixed point ``(F, G)`` of :func:`sinkhorn_matrix_iterate`.

    Uses ``F = sigma^2 (U + A^{-1}) + I`` and ``G = sigma^2 (V + B^{-1}) + I``,
    which equal ``C^{-T} B`` and ``C^{-1} A``.
    """
    A, B = _pair(A, B)
    sigma = check_sigma(sigma)
    U, V = dual_potentials(A, B, sigma)
    s2 = sigma ** 2
    eye = np.eye(A.shape[0])
    F = _sym(s2 * (U + _inv_pd(A, "A")) + eye)
    G = _sym(s2 * (V + _inv_pd(B, "B")) + eye)
    return SinkhornPair(F, G)


def sinkhorn_matrix_iterate(A, B, sigma, tol=1e-12, max_iter=10000):
    r"""Sinkhorn's algorithm on quadratic potentials, as a matrix iteration.

    .. math::
        F_{n+1} = \sigma^2 A^{-1} + G_n^{-1},\qquad
        G_{n+1} = \sigma^2 B^{-1} + F_{n+1}^{-1}

    from ``F_0 = sigma^2 A^{-1} + I`` and ``G_0 = sigma^2 B^{-1} + I``.

    The iteration is a contraction. It stops once the relative changes
    ``||F_{n+1} - F_n||_2 / ||F_{n+1}||_2`` and the same for ``G`` are below
    ``tol``, and so is the geometric tail bound ``delta * rho / (1 - rho)``
    (``rho`` the observed ratio of successive changes).

    Returns
    -------
    pair : SinkhornPair
    n_iter : int

    Raises
    ------
    NotConverged
        After ``max_iter`` iterations.
    """
    A, B = _pair(A, B)
    sigma = check_sigma(sigma)
    s2 = sigma ** 2
    eye = np.eye(A.shape[0])
    sAi = s2 * _inv_pd(A, "A")
    sBi = s2 * _inv_pd(B, "B")
    rA, rB = _sqrtm(A), _sqrtm(B)
    M = rB @ rA

    # Work with X = A^1/2 F A^1/2 and Y = B^1/2 G B^1/2, for which the
    # iteration reads X <- s2 I + M' Y^-1 M, Y <- s2 I + M X^-1 M' with
    # M = B^1/2 A^1/2. Only well-conditioned systems get solved, and each
    # half step costs one Cholesky solve and one product.
    def solve(S, R):
        _, sol, info = lapack.dposv(S, R)
        if info != 0:
            raise NotConverged("matrix Sinkhorn lost positive definiteness",
                               residual=delta, iterations=it)
        return sol

    def f_and_g(X, Y):
        return (_sym(sAi + rB @ solve(Y, rB)), _sym(sBi + rA @ solve(X, rA)))

    diag = slice(None, None, A.shape[0] + 1)
    Mt = np.ascontiguousarray(M.T)

    def shifted(L, S, R):
        out = L @ solve(S, R)
        out.flat[diag] += s2
        return out

    it = 0
    delta = prev = np.inf
    Y = s2 * eye + B
    X = shifted(Mt, Y, M)
    FG = None
    for it in range(1, max_iter + 1):
        Y_new = shifted(M, X, Mt)
        X_new = shifted(Mt, Y_new, M)
        # cheap proxy on X (Y is a function of X); the operator-norm test on
        # F and G runs near the end
        delta = abs(X_new - X).max() / X_new.max()
        X, Y = X_new, Y_new
        if not np.isfinite(delta):
            raise NotConverged("matrix Sinkhorn produced non-finite iterates",
                               residual=delta, iterations=it)
        rho = min(delta / prev, 0.999999) if prev > 0 else 0.0
        prev = delta
        if delta < 10 * tol and delta * rho / (1 - rho) < 10 * tol:
            FG_new = f_and_g(X, Y)
            if FG is not None:
                op = max(np.linalg.norm(FG_new[k] - FG[k], 2) / np.linalg.norm(FG_new[k], 2)
                         for k in (0, 1))
                if op < tol and op * rho / (1 - rho) < tol:
                    return SinkhornPair(*FG_new), it
            FG = FG_new
    raise NotConverged(f"matrix Sinkhorn did not converge in {max_iter} iterations",
                       residual=delta, best=SinkhornPair(*f_and_g(X, Y)), iterations=max_iter)


def grad_bures_sigma(A, B, sigma):
    r"""Gradient of :func:`bures_sigma_sq` in each argument.

    Equals ``(-sigma^2 U, -sigma^2 V)`` with ``U, V`` from
    :func:`dual_potentials`; for instance
    :math:`\nabla_A = I - B^{1/2}\big((B^{1/2}AB^{1/2} + \sigma^4/4)^{1/2} + \sigma^2/2\big)^{-1}B^{1/2}`.
    Valid for singular PSD inputs.
    """
    U, V = dual_potentials(A, B, sigma)
    s2 = sigma ** 2
    return -s2 * U, -s2 * V


def argmin_in_A(B, sigma):
    r"""Minimizer over PSD ``A`` of ``bures_sigma_sq(A, B, sigma)``.

    Shrinks the spectrum of ``B``: :math:`\lambda \mapsto (\lambda - \sigma^2)_+`.
    """
    sigma = check_sigma(sigma)
    return threshold_psd(as_psd(B, "B"), sigma ** 2)


def sinkhorn_divergence(alpha, beta, sigma):
    """Debiased value ``OT(a, b) - (OT(a, a) + OT(b, b)) / 2``; zero iff the measures agree."""
    return (ot_sigma(alpha, beta, sigma)
            - 0.5 * (ot_sigma(alpha, alpha, sigma) + ot_sigma(beta, beta, sigma)))


def dual_objective(F, G, A, B, sigma):
    r"""Dual matrix objective in ``(F, G)``.

    .. math::
        \langle I - F, A\rangle + \langle I - G, B\rangle
        + \sigma^2\log\det\frac{FG - I}{\sigma^4} + \sigma^2\log\det AB + 2d\sigma^2

    Its maximum over feasible pairs equals :func:`bures_sigma_sq`.

    Raises
    ------
    InfeasibleDual
        If ``F`` or ``G`` is not positive definite or ``FG - I`` has
        non-positive spectrum.
    """
    A, B = _pair(A, B)
    F = as_psd(F, "F")
    G = as_psd(G, "G")
    sigma = check_sigma(sigma)
    d = check_same_dim(A, F, G)
    s2 = sigma ** 2
    eye = np.eye(d)
    # det(FG - I) = det(P) det(Q - P^-1) for {P, Q} = {F, G}; factoring out
    # the larger one keeps the small eigenvalues of FG - I accurate
    P, Q = (F, G) if np.linalg.norm(F, 2) >= np.linalg.norm(G, 2) else (G, F)
    _logdet_chol(Q, "dual matrix", InfeasibleDual)
    ld = _logdet_chol(P, "dual matrix", InfeasibleDual)
    ld += _logdet_chol(Q - _inv_pd(P, "dual matrix", InfeasibleDual), "FG - I", InfeasibleDual)
    ldAB = _logdet_chol(A, "A") + _logdet_chol(B, "B")
    return float(np.sum((eye - F) * A) + np.sum((eye - G) * B)
                 + s2 * (ld - 2 * d * np.log(s2)) + s2 * ldAB + 2 * d * s2)


def primal_K_objective(K, A, B, sigma):
    r"""Primal matrix objective in the normalized cross-covariance ``K``.

    .. math::
        \mathrm{tr}A + \mathrm{tr}B - 2\,\mathrm{tr}(A^{1/2} K B^{1/2})
        - \sigma^2 \log\det(I - KK^\top)

    Raises
    ------
    InfeasiblePrimal
        If ``||K||_2 > 1 - 1e-12``.
    """
    A, B = _pair(A, B)
    sigma = check_sigma(sigma)
    K = np.asarray(K, dtype=float)
    d = A.shape[0]
    if K.shape != (d, d):
        raise InvalidInput(f"K must have shape {(d, d)}")
    if np.linalg.norm(K, 2) > 1 - 1e-12:
        raise InfeasiblePrimal("K must be a strict contraction")
    ld = _logdet_chol(np.eye(d) - K @ K.T, "I - KK'", InfeasiblePrimal)
    return float(np.trace(A) + np.trace(B) - 2 * np.trace(_sqrtm(A) @ K @ _sqrtm(B))
                 - sigma ** 2 * ld)


def optimal_K(A, B, sigma):
    """Optimal contraction ``A^{-1/2} C B^{-1/2}`` for :func:`primal_K_objective`."""
    A, B = _pair(A, B)
    _, irA = _sqrt_and_invsqrt(A, "A")
    _, irB = _sqrt_and_invsqrt(B, "B")
    return irA @ cross_cov(A, B, sigma) @ irB


def plan_cost_and_kl(plan):
    r"""Transport cost and KL term of a Gaussian plan.

    Returns ``(tr A + tr B - 2 tr C, (logdet A + logdet B - logdet cov) / 2)``.
    At the optimal plan, ``cost + 2 sigma^2 kl`` equals :func:`bures_sigma_sq`.

    Raises
    ------
    NotPositiveDefinite
        If the plan covariance is singular.
    """
    A, B, C = plan.A, plan.B, plan.C
    cost = float(np.trace(A) + np.trace(B) - 2 * np.trace(C))
    if is_singular(np.linalg.eigvalsh(plan.cov)):
        raise NotPositiveDefinite("plan covariance is singular")
    ld = _logdet_chol(plan.cov, "plan covariance")
    kl = 0.5 * (_logdet_chol(A, "A") + _logdet_chol(B, "B") - ld)
    return cost, kl
