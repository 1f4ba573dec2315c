"""Typed exceptions.

Every error raised on purpose by the library derives from
:class:`GaussEOTError` and carries an ``exit_code`` used by the CLI:
2 for bad input, 3 for a numerical precondition failure and 4 for
non-convergence.
"""


class GaussEOTError(Exception):
    """Base class for library errors."""

    exit_code = 3


class InvalidInput(GaussEOTError, ValueError):
    """Malformed or inconsistent input (shapes, masses, non-finite values)."""

    exit_code = 2


class NotPsd(GaussEOTError):
    """A matrix expected to be positive semi-definite has a negative eigenvalue."""


class SingularMatrix(GaussEOTError):
    """A matrix that must be inverted is singular."""


class NotPositiveDefinite(GaussEOTError):
    """A matrix expected to be positive definite is not."""


class NotIntegrable(GaussEOTError):
    """A Gaussian integral of an exponentiated quadratic form diverges."""


class InfeasibleDual(GaussEOTError):
    """The dual pair (F, G) is outside the domain of the dual objective."""


class InfeasiblePrimal(GaussEOTError):
    """The coupling matrix K is not a strict contraction."""


class NumericalInconsistency(GaussEOTError):
    """A quantity that is positive in exact arithmetic came out non-positive."""


class Unsupported(GaussEOTError):
    """The operation is not defined for the given input (e.g. dimension)."""


class NotConverged(GaussEOTError):
    """An iterative method hit its iteration cap or diverged.

    Attributes
    ----------
    residual : float
        Last residual reached.
    best : object
        Best iterate found so far (method specific), or None.
    iterations : int
        Number of iterations performed.
    """

    exit_code = 4

    def __init__(self, message, residual=float("nan"), best=None, iterations=0):
        super().__init__(message)
        self.residual = residual
        self.best = best
        self.iterations = iterations
