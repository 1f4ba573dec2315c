r"""Exponentiated quadratic potentials and their Gaussian integrals.

A :class:`QuadPotential` stores :math:`h(x) = -\tfrac12(x^\top U x - 2u^\top x) + \log m`.
Sinkhorn iterations between Gaussian measures map such potentials to
potentials of the same form, which is what :func:`sinkhorn_transform`
computes in closed form.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from ._errors import NotIntegrable, SingularMatrix
from .gaussian_ot import Gaussian
from .linalg import _sym
from .validation import check_positive, check_same_dim, check_symmetric, check_vector


@dataclass(frozen=True)
class QuadPotential:
    """Quadratic potential ``-(x'Ux - 2u'x)/2 + log_m``."""

    U: np.ndarray
    u: np.ndarray
    log_m: float = 0.0

    def __post_init__(self):
        U = check_symmetric(self.U, "U")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "u", check_vector(self.u, U.shape[0], "u"))
        object.__setattr__(self, "log_m", float(self.log_m))

    @property
    def dim(self):
        return self.U.shape[0]

    @classmethod
    def zero(cls, d):
        return cls(np.zeros((d, d)), np.zeros(d), 0.0)

    def __call__(self, x):
        return eval_quad(self, x)


def eval_quad(h, x):
    """Evaluate a potential at one point ``x`` of shape (d,) or at rows of (n, d)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        check_vector(x, h.dim, "x")
        return float(-0.5 * (x @ h.U @ x - 2 * h.u @ x) + h.log_m)
    if x.shape[-1] != h.dim:
        check_vector(x[0], h.dim, "x")
    return -0.5 * (np.einsum("ni,ij,nj->n", x, h.U, x) - 2 * x @ h.u) + h.log_m


def add_factored(A, a, B, b):
    r"""Merge two centred quadratic forms.

    For :math:`P_\alpha(x) = -\tfrac12 (x-a)^\top A (x-a)` and likewise
    :math:`P_\beta`, returns ``(C, c, q)`` with

    .. math::
        P_\alpha + P_\beta = -\tfrac12\left((x-c)^\top C (x-c) + q\right),

    ``C = A + B``, ``c = C^{-1}(Aa + Bb)`` and
    ``q = a'Aa + b'Bb - c'Cc``.

    Raises
    ------
    SingularMatrix
        If ``A + B`` is singular.
    """
    A = check_symmetric(A, "A")
    B = check_symmetric(B, "B")
    d = check_same_dim(A, B)
    a = check_vector(a, d, "a")
    b = check_vector(b, d, "b")
    C = A + B
    rhs = A @ a + B @ b
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu = sla.lu_factor(C, check_finite=False)
    except (sla.LinAlgError, ValueError) as exc:
        raise SingularMatrix("A + B is singular") from exc
    if np.min(np.abs(np.diag(lu[0]))) <= 1e-14 * max(np.abs(C).max(), 1e-300):
        raise SingularMatrix("A + B is singular")
    c = sla.lu_solve(lu, rhs)
    q = float(a @ A @ a + b @ B @ b - c @ C @ c)
    return C, c, q


def _chol_pd(M, exc, msg):
    try:
        return sla.cho_factor(M, lower=True, check_finite=False)
    except sla.LinAlgError as err:
        raise exc(msg) from err


def _logdet_chol(cf):
    return 2.0 * float(np.sum(np.log(np.diag(cf[0]))))


def gaussian_convolve_quad(h, sigma):
    r"""Convolve ``exp(h)`` with the normalized kernel N(0, sigma^2 I).

    With :math:`G = (\sigma^2 U + I)^{-1}` the result is the potential
    ``(GU, Gu, log_m + sigma^2 u'Gu/2 - logdet(sigma^2 U + I)/2)``.

    Raises
    ------
    NotIntegrable
        If :math:`\sigma^2 U + I` is not positive definite.
    """
    sigma = check_positive(sigma, "sigma")
    s2 = sigma ** 2
    d = h.dim
    M = _sym(s2 * h.U + np.eye(d))
    cf = _chol_pd(M, NotIntegrable, "sigma^2 U + I is not positive definite")
    G = sla.cho_solve(cf, np.eye(d))
    Gu = G @ h.u
    log_m = h.log_m + 0.5 * s2 * float(h.u @ Gu) - 0.5 * _logdet_chol(cf)
    return QuadPotential(_sym(G @ h.U), Gu, log_m)


def sinkhorn_transform(h, measure, sigma, tau=1.0):
    r"""Closed-form (soft) Sinkhorn transform of a quadratic potential.

    Computes

    .. math::
        x \mapsto -\tau \log \int \exp\left(-\frac{\|x - y\|^2}{2\sigma^2} + h(y)\right)
        \mathrm{d}\alpha(y)

    for ``alpha = measure = m N(a, A)``. With
    :math:`F = \sigma^2 U + \sigma^2 A^{-1} + I` and :math:`p = u + A^{-1} a`
    the output is the potential

    * ``V = tau (F^{-1} - I) / sigma^2``
    * ``v = -tau F^{-1} p``
    * ``log_m = -tau * c0`` where ``c0`` collects every x-independent term.

    ``tau = 1`` is the balanced transform; ``tau = gamma / (2 sigma^2 + gamma)``
    the unbalanced one.

    Raises
    ------
    NotIntegrable
        If ``F`` is not positive definite (the integral diverges).
    SingularMatrix
        If the measure covariance is singular.
    """
    sigma = check_positive(sigma, "sigma")
    tau = float(tau)
    if not 0 < tau <= 1:
        raise ValueError("tau must lie in (0, 1]")
    A = measure.cov
    a = measure.mean
    d = check_same_dim(A, h.U)
    s2 = sigma ** 2
    ca = _chol_pd(A, SingularMatrix, "measure covariance must be positive definite")
    Ainv = sla.cho_solve(ca, np.eye(d))
    F = _sym(s2 * h.U + s2 * Ainv + np.eye(d))
    cf = _chol_pd(F, NotIntegrable,
                  "sigma^2 U + sigma^2 A^-1 + I is not positive definite; the integral diverges")
    Finv = _sym(sla.cho_solve(cf, np.eye(d)))
    p = h.u + Ainv @ a
    Fp = Finv @ p
    c0 = (h.log_m + np.log(measure.mass) - 0.5 * _logdet_chol(ca) - 0.5 * _logdet_chol(cf)
          + d * np.log(sigma) - 0.5 * float(a @ Ainv @ a) + 0.5 * s2 * float(p @ Fp))
    V = tau * (Finv - np.eye(d)) / s2
    return QuadPotential(V, -tau * Fp, -tau * c0)


def log_gaussian_integral(h, measure):
    r"""``log \int exp(h) d(alpha)`` for ``alpha = m N(a, A)`` with A positive definite.

    Raises
    ------
    NotIntegrable
        If ``U + A^{-1}`` is not positive definite.
    """
    A = measure.cov
    a = measure.mean
    d = check_same_dim(A, h.U)
    ca = _chol_pd(A, SingularMatrix, "measure covariance must be positive definite")
    Ainv = sla.cho_solve(ca, np.eye(d))
    cp = _chol_pd(_sym(h.U + Ainv), NotIntegrable, "U + A^-1 is not positive definite")
    p = h.u + Ainv @ a
    return float(np.log(measure.mass) + h.log_m - 0.5 * _logdet_chol(ca) - 0.5 * _logdet_chol(cp)
                 + 0.5 * p @ sla.cho_solve(cp, p) - 0.5 * a @ Ainv @ a)
