"""scikit-learn style wrappers around the closed forms.

Gaussians are fitted to data with :class:`sklearn.covariance.EmpiricalCovariance`
(any covariance estimator with ``location_`` and ``covariance_`` can be
passed instead), then the closed-form solvers do the rest.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin, clone
from sklearn.covariance import EmpiricalCovariance
from sklearn.utils.validation import check_array, check_is_fitted

from ._errors import InvalidInput
from .barycenter import BarycenterProblem, debiased_barycenter
from .entropic import ot_sigma, plan_closed_form
from .gaussian_ot import Gaussian
from .unbalanced import UnbalancedParams, unbalanced_plan, uot


def fit_gaussian(X, estimator=None, mass=1.0):
    """Gaussian with the location and covariance of ``estimator`` fitted on ``X``."""
    X = check_array(X, ensure_min_samples=2)
    est = clone(estimator) if estimator is not None else EmpiricalCovariance()
    est.fit(X)
    return Gaussian(est.location_, est.covariance_, mass)


class EntropicGaussianTransport(TransformerMixin, BaseEstimator):
    """Entropic OT between Gaussian fits of two samples.

    ``fit(X, Y)`` fits one Gaussian per sample and computes the optimal
    plan in closed form (unbalanced when ``gamma`` is set). ``transform``
    maps source points to the conditional mean of the plan,
    ``E[y | x] = mu_y + H_yx H_xx^{-1} (x - mu_x)``.

    Parameters
    ----------
    sigma : float, default 0.5
        Regularization; the entropic weight is ``2 sigma^2``.
    gamma : float or None, default None
        Marginal penalty. None means balanced transport.
    ridge : float, default 0.0
        Jitter for singular covariances (balanced plans only).
    covariance_estimator : estimator or None
        Fitted on each sample; ``EmpiricalCovariance()`` by default.
    mass_source, mass_target : float, default 1.0
        Masses given to the fitted Gaussians (unbalanced only).

    Attributes
    ----------
    source_, target_ : Gaussian
    plan_mean_ : ndarray, shape (2d,)
    plan_cov_ : ndarray, shape (2d, 2d)
    plan_mass_ : float
    cost_ : float
        Entropic OT (or unbalanced OT) value between the fits.
    """

    def __init__(self, sigma=0.5, gamma=None, ridge=0.0, covariance_estimator=None,
                 mass_source=1.0, mass_target=1.0):
        self.sigma = sigma
        self.gamma = gamma
        self.ridge = ridge
        self.covariance_estimator = covariance_estimator
        self.mass_source = mass_source
        self.mass_target = mass_target

    def fit(self, X, Y):
        if self.gamma is None and (self.mass_source != 1 or self.mass_target != 1):
            raise InvalidInput("balanced transport needs unit masses; set gamma")
        self.source_ = fit_gaussian(X, self.covariance_estimator, self.mass_source)
        self.target_ = fit_gaussian(Y, self.covariance_estimator, self.mass_target)
        if self.source_.dim != self.target_.dim:
            raise InvalidInput("X and Y have different numbers of features")
        if self.gamma is None:
            plan = plan_closed_form(self.source_, self.target_, self.sigma, ridge=self.ridge)
            self.plan_mass_ = 1.0
            self.cost_ = ot_sigma(self.source_, self.target_, self.sigma)
        else:
            params = UnbalancedParams(self.sigma, self.gamma)
            plan = unbalanced_plan(self.source_, self.target_, params)
            self.plan_mass_ = plan.mass
            self.cost_ = uot(self.source_, self.target_, params, plan=plan)
        self.plan_mean_, self.plan_cov_ = plan.mean, plan.cov
        self.n_features_in_ = self.source_.dim
        return self

    def transform(self, X):
        check_is_fitted(self, "plan_cov_")
        X = check_array(X)
        d = self.n_features_in_
        if X.shape[1] != d:
            raise InvalidInput(f"expected {d} features, got {X.shape[1]}")
        H = self.plan_cov_
        mx, my = self.plan_mean_[:d], self.plan_mean_[d:]
        coef = np.linalg.solve(H[:d, :d], H[:d, d:])
        return my + (X - mx) @ coef


class DebiasedBarycenterEstimator(BaseEstimator):
    """Debiased entropic barycenter of Gaussian fits of several samples.

    Parameters
    ----------
    sigma : float, default 0.5
    tol : float, default 1e-10
    max_iter : int, default 1000
    covariance_estimator : estimator or None

    Attributes
    ----------
    location_ : ndarray, shape (d,)
    covariance_ : ndarray, shape (d, d)
    residual_ : float
    n_iter_ : int
    """

    def __init__(self, sigma=0.5, tol=1e-10, max_iter=1000, covariance_estimator=None):
        self.sigma = sigma
        self.tol = tol
        self.max_iter = max_iter
        self.covariance_estimator = covariance_estimator

    def fit(self, datasets, weights=None):
        """``datasets`` is a sequence of ``(n_k, d)`` arrays; weights default to uniform."""
        comps = tuple(fit_gaussian(X, self.covariance_estimator) for X in datasets)
        if not comps:
            raise InvalidInput("need at least one dataset")
        w = np.full(len(comps), 1.0 / len(comps)) if weights is None else np.asarray(weights, float)
        g, self.residual_, self.n_iter_ = debiased_barycenter(
            BarycenterProblem(w, comps, self.sigma), tol=self.tol, max_iter=self.max_iter)
        self.location_, self.covariance_ = g.mean, g.cov
        self.n_features_in_ = g.dim
        return self
