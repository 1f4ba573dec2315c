"""Dense symmetric linear algebra primitives.

Matrix functions go through a full symmetric eigendecomposition. The
coupled Newton-Schulz iteration in :func:`newton_schulz_monge` is an
alternative path for the Monge map, checked against the eigenvalue route.
"""

import numpy as np
from scipy import linalg as sla

from ._errors import InvalidInput, NotConverged, NotPositiveDefinite, SingularMatrix
from .validation import check_eigs_psd, check_same_dim, check_symmetric, check_vector, is_singular


def _sym(M):
    return 0.5 * (M + M.T)


def _eigh(M):
    """Eigendecomposition of an already symmetric array, descending order."""
    w, V = np.linalg.eigh(M)
    w, V = w[::-1], V[:, ::-1]
    # sign convention: largest-magnitude component of each eigenvector is positive
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return w, V * signs


def _fun(w, V, f):
    return _sym((V * f(w)) @ V.T)


def _sqrtm(M):
    """PSD square root of a symmetric array, negative eigenvalues clamped."""
    w, V = _eigh(_sym(M))
    return _fun(np.clip(w, 0.0, None), V, np.sqrt)


def sym_eig(M):
    """Symmetric eigendecomposition with a deterministic ordering.

    Parameters
    ----------
    M : array_like, shape (d, d)
        Symmetric matrix.

    Returns
    -------
    w : ndarray, shape (d,)
        Eigenvalues in descending order.
    V : ndarray, shape (d, d)
        Orthonormal eigenvectors as columns, each with its largest-magnitude
        component positive.
    """
    M = check_symmetric(M, "M")
    return _eigh(M)


def sqrtm_psd(M):
    """Unique PSD square root of a PSD matrix.

    Eigenvalues within ``1e-10 * max(lambda_max, 1)`` below zero are clamped
    to zero; anything more negative raises :class:`NotPsd`.
    """
    w, V = sym_eig(M)
    w = check_eigs_psd(w, "M")
    return _fun(w, V, np.sqrt)


def invsqrtm_pd(M, ridge=0.0):
    r"""Inverse square root :math:`(M + rI)^{-1/2}` of a PSD matrix.

    Parameters
    ----------
    M : array_like, shape (d, d)
    ridge : float, default 0
        Non-negative jitter added to the spectrum.

    Raises
    ------
    SingularMatrix
        If the smallest shifted eigenvalue is not positive.
    """
    if ridge < 0:
        raise InvalidInput("ridge must be non-negative")
    w, V = sym_eig(M)
    w = check_eigs_psd(w, "M") + ridge
    if is_singular(w):
        raise SingularMatrix("matrix is singular; pass ridge > 0 to regularize")
    return _fun(w, V, lambda x: 1.0 / np.sqrt(x))


def logdet_pd(M):
    """Log-determinant of a positive definite matrix, as a sum of log eigenvalues."""
    w, _ = sym_eig(M)
    if w.size and w.min() <= 0:
        raise NotPositiveDefinite(f"smallest eigenvalue {w.min():.3e} is not positive")
    return float(np.sum(np.log(w)))


def threshold_psd(M, t):
    r"""Shift the spectrum down by ``t`` and clip at zero: :math:`\lambda \mapsto (\lambda - t)_+`."""
    w, V = sym_eig(M)
    return _fun(np.maximum(w - t, 0.0), V, lambda x: x)


def mahalanobis_sq(a, b, C):
    """Squared Mahalanobis distance ``(a - b)^T C (a - b)``."""
    C = check_symmetric(C, "C")
    a = check_vector(a, C.shape[0], "a")
    b = check_vector(b, C.shape[0], "b")
    z = a - b
    return max(float(z @ C @ z), 0.0)


def monge_map_evd(A, B):
    """Eigendecomposition evaluation of the Gaussian Monge map from A to B."""
    A = check_symmetric(A, "A")
    B = check_symmetric(B, "B")
    s = invsqrtm_pd(A)
    r = _sqrtm(A)
    return _sym(s @ _sqrtm(r @ B @ r) @ s)


# growth of the spectral residual below this level is rounding noise
_NS_FLOOR = 1e-8


def newton_schulz_monge(A, B, eps=1e-2, tol=1e-10, max_iter=100, return_history=False):
    r"""Monge maps :math:`T^{AB}` and :math:`T^{BA}` by coupled Newton-Schulz iterations.

    Both matrices are first scaled to operator norm :math:`1/(1+\epsilon)`.
    The iteration is

    .. math::
        T = (3I - ZY)/2,\quad Y \leftarrow YT,\quad Z \leftarrow TZ

    started from ``Y = B``, ``Z = A`` (scaled), so that ``Y`` tends to
    :math:`B(AB)^{-1/2} = T^{AB}` and ``Z`` to :math:`T^{BA}`.
    The outputs are rescaled using homogeneity of the Monge map.

    Parameters
    ----------
    A, B : array_like, shape (d, d)
        Positive definite matrices.
    eps : float, default 1e-2
        Pre-scaling margin.
    tol : float, default 1e-10
        Stop when the entrywise 1-norm of the change in ``Y`` is below ``tol``.
    max_iter : int, default 100
    return_history : bool, default False
        Also return the list of successive ``Y`` changes.

    Returns
    -------
    T_ab, T_ba : ndarray, shape (d, d)
    n_iter : int
    history : list of float
        Only when ``return_history`` is True.

    Raises
    ------
    NotConverged
        If ``max_iter`` is reached, or if the spectral distance of ``ZY``
        to the identity grows for 3 consecutive iterations.
    """
    A = check_symmetric(A, "A")
    B = check_symmetric(B, "B")
    d = check_same_dim(A, B)
    wa = np.linalg.eigvalsh(A)
    wb = np.linalg.eigvalsh(B)
    if is_singular(wa) or is_singular(wb):
        raise NotPositiveDefinite("Newton-Schulz requires positive definite inputs")
    na, nb = wa[-1], wb[-1]
    Y = B / ((1 + eps) * nb)
    Z = A / ((1 + eps) * na)
    eye = np.eye(d)

    history = []
    prev_dev = np.inf
    n_grow = 0
    for it in range(1, max_iter + 1):
        T = 0.5 * (3 * eye - Z @ Y)
        Y_new = Y @ T
        Z = T @ Z
        delta = float(np.abs(Y_new - Y).sum())
        Y = Y_new
        history.append(delta)
        if not np.isfinite(delta):
            raise NotConverged("Newton-Schulz produced non-finite iterates",
                               residual=delta, iterations=it)
        if delta < tol:
            break
        # ZY is a polynomial in the scaled AB, so its spectrum moves
        # monotonically toward 1 when the iteration is well posed
        dev = float(np.abs(np.linalg.eigvals(Z @ Y) - 1.0).max())
        n_grow = n_grow + 1 if (dev > prev_dev and dev > _NS_FLOOR) else 0
        prev_dev = dev
        if n_grow >= 3:
            raise NotConverged("Newton-Schulz diverged", residual=delta,
                               best=(Y, Z), iterations=it)
    else:
        raise NotConverged(f"Newton-Schulz did not converge in {max_iter} iterations",
                           residual=history[-1], best=(Y, Z), iterations=max_iter)

    T_ab = _sym(Y) * np.sqrt(nb / na)
    T_ba = _sym(Z) * np.sqrt(na / nb)
    if return_history:
        return T_ab, T_ba, it, history
    return T_ab, T_ba, it
