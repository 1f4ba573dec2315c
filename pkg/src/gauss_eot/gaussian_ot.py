"""Unregularized optimal transport between Gaussians.

The squared 2-Wasserstein distance between N(a, A) and N(b, B) splits as
``||a - b||^2 + bures(A, B)``, and the optimal map is affine with the
symmetric linear part :func:`monge_map`.
"""

from dataclasses import dataclass, field

import numpy as np

from ._errors import InvalidInput
from .linalg import _eigh, _sqrtm, _sym, invsqrtm_pd
from .validation import check_eigs_psd, check_positive, check_same_dim, check_symmetric, check_vector


def as_psd(M, name="matrix"):
    """Validate a PSD matrix: symmetrize, clamp tiny negative eigenvalues."""
    M = check_symmetric(M, name)
    w, V = _eigh(M)
    if w.size and w.min() < 0:
        w = check_eigs_psd(w, name)
        M = _sym((V * w) @ V.T)
    return M


@dataclass(frozen=True)
class Gaussian:
    """Scaled Gaussian measure ``mass * N(mean, cov)``.

    Parameters
    ----------
    mean : array_like, shape (d,)
    cov : array_like, shape (d, d)
        Symmetric PSD covariance (singular allowed).
    mass : float, default 1.0
        Total mass, strictly positive.
    """

    mean: np.ndarray
    cov: np.ndarray
    mass: float = field(default=1.0)

    def __post_init__(self):
        cov = as_psd(self.cov, "cov")
        mean = check_vector(self.mean, cov.shape[0], "mean")
        mass = check_positive(self.mass, "mass")
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "mass", mass)

    @property
    def dim(self):
        return self.mean.shape[0]

    @classmethod
    def standard(cls, d):
        return cls(np.zeros(d), np.eye(d))


def require_unit_mass(*gaussians):
    for g in gaussians:
        if abs(g.mass - 1.0) > 1e-12:
            raise InvalidInput(f"balanced transport needs unit masses, got {g.mass}; "
                               "use the unbalanced module")


def bures(A, B):
    r"""Squared Bures distance between PSD matrices.

    .. math::
        \mathrm{tr} A + \mathrm{tr} B - 2\,\mathrm{tr}(A^{1/2} B A^{1/2})^{1/2}

    Singular inputs are allowed. The result is clipped at zero to remove
    rounding noise.
    """
    A = as_psd(A, "A")
    B = as_psd(B, "B")
    check_same_dim(A, B)
    rA = _sqrtm(A)
    val = np.trace(A) + np.trace(B) - 2 * np.trace(_sqrtm(rA @ B @ rA))
    return max(float(val), 0.0)


def w2_gaussian(alpha, beta):
    """Squared 2-Wasserstein distance between two unit-mass Gaussians."""
    require_unit_mass(alpha, beta)
    check_same_dim(alpha.cov, beta.cov)
    diff = alpha.mean - beta.mean
    return float(diff @ diff) + bures(alpha.cov, beta.cov)


def monge_map(A, B):
    r"""Linear part of the optimal map from N(0, A) to N(0, B).

    :math:`T = A^{-1/2}(A^{1/2} B A^{1/2})^{1/2} A^{-1/2}`, which satisfies
    :math:`T A T = B`.

    Raises
    ------
    SingularMatrix
        If A is singular.
    """
    A = as_psd(A, "A")
    B = as_psd(B, "B")
    check_same_dim(A, B)
    s = invsqrtm_pd(A)
    rA = _sqrtm(A)
    return _sym(s @ _sqrtm(rA @ B @ rA) @ s)


def bures_grad(A, B):
    """Gradient of :func:`bures` with respect to A, ``I - monge_map(A, B)``."""
    T = monge_map(A, B)
    return np.eye(T.shape[0]) - T
