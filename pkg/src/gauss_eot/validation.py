"""Input validation helpers shared by all modules."""

import numbers

import numpy as np

from ._errors import InvalidInput, NotPsd

# relative clamping tolerance for PSD inputs
PSD_RTOL = 1e-10
# symmetry tolerance, relative to the largest entry
SYM_RTOL = 1e-12
# eigenvalues below this fraction of the spectral radius count as zero when inverting
SING_RTOL = 1e-14


def check_finite_array(x, name="array"):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InvalidInput(f"{name} contains non-finite entries")
    return x


def check_square(M, name="matrix"):
    """Return ``M`` as a finite 2d float array, checking it is square."""
    M = check_finite_array(M, name)
    if M.ndim == 0:
        M = M.reshape(1, 1)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidInput(f"{name} must be a square matrix, got shape {M.shape}")
    return M


def check_symmetric(M, name="matrix", rtol=SYM_RTOL, symmetrize=True):
    """Check that ``M`` is symmetric up to ``rtol * max|M|`` and symmetrize it.

    Parameters
    ----------
    M : array_like, shape (d, d)
    name : str
        Used in error messages.
    rtol : float
        Allowed asymmetry relative to the largest absolute entry.
    symmetrize : bool
        Return ``(M + M.T) / 2`` instead of ``M``.
    """
    M = check_square(M, name)
    scale = max(np.abs(M).max(initial=0.0), np.finfo(float).tiny)
    if np.abs(M - M.T).max(initial=0.0) > rtol * scale:
        raise InvalidInput(f"{name} is not symmetric")
    return 0.5 * (M + M.T) if symmetrize else M


def psd_tolerance(w):
    """Clamping tolerance for an eigenvalue array ``w``."""
    top = np.max(w, initial=0.0)
    return PSD_RTOL * max(top, 1.0)


def check_eigs_psd(w, name="matrix"):
    """Clamp eigenvalues within tolerance of 0, raise NotPsd below it."""
    tol = psd_tolerance(w)
    if w.size and w.min() < -tol:
        raise NotPsd(f"{name} has eigenvalue {w.min():.3e} < -{tol:.1e}")
    return np.clip(w, 0.0, None)


def is_singular(w):
    """True if the spectrum ``w`` is numerically singular for inversion."""
    w = np.asarray(w)
    return bool(w.size) and w.min() <= SING_RTOL * np.abs(w).max(initial=0.0)


def check_vector(x, dim=None, name="vector"):
    x = check_finite_array(x, name)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.ndim != 1:
        raise InvalidInput(f"{name} must be one-dimensional, got shape {x.shape}")
    if dim is not None and x.shape[0] != dim:
        raise InvalidInput(f"{name} has length {x.shape[0]}, expected {dim}")
    return x


def check_positive(x, name="value", strict=True):
    if not isinstance(x, numbers.Real) and not (np.ndim(x) == 0):
        raise InvalidInput(f"{name} must be a real scalar")
    x = float(x)
    if not np.isfinite(x) or (x <= 0 if strict else x < 0):
        raise InvalidInput(f"{name} must be {'positive' if strict else 'non-negative'}, got {x}")
    return x


def check_sigma(sigma):
    return check_positive(sigma, "sigma")


def check_same_dim(*mats):
    dims = {m.shape[0] for m in mats}
    if len(dims) != 1:
        raise InvalidInput(f"dimension mismatch: {sorted(dims)}")
    return dims.pop()
