"""Closed-form entropic optimal transport between Gaussian measures.

Distances, optimal plans, dual potentials, gradients and barycenters for
balanced and unbalanced entropic OT between Gaussians, plus a sample-based
Sinkhorn oracle to check them against.

All functions take the regularization as ``sigma``; the entropic weight
is ``epsilon = 2 sigma^2``.
"""

from ._errors import (GaussEOTError, InfeasibleDual, InfeasiblePrimal, InvalidInput,
                      NotConverged, NotIntegrable, NotPositiveDefinite, NotPsd,
                      NumericalInconsistency, SingularMatrix, Unsupported)
from .barycenter import (BarycenterProblem, barycenter_gradient, barycenter_map,
                         barycenter_residual, debiased_barycenter)
from .empirical import (DiscreteMeasure, ExperimentConfig, ExperimentRow, SeededRng,
                        convergence_experiment, moment_experiment, plan_histogram,
                        plan_moments, sample_gaussian, sample_wishart, sinkhorn_discrete,
                        sinkhorn_discrete_unbalanced)
from .entropic import (EntropicPlan, SinkhornPair, argmin_in_A, bures_sigma_sq,
                       closed_form_pair, cross_cov, d_sigma, dual_objective, dual_potentials,
                       grad_bures_sigma, optimal_K, ot_sigma, plan_closed_form,
                       primal_K_objective, sinkhorn_divergence, sinkhorn_matrix_iterate)
from .gaussian_ot import Gaussian, bures, bures_grad, monge_map, w2_gaussian
from .linalg import (invsqrtm_pd, logdet_pd, newton_schulz_monge, sqrtm_psd, sym_eig,
                     threshold_psd)
from .quadform import (QuadPotential, add_factored, eval_quad, gaussian_convolve_quad,
                       log_gaussian_integral, sinkhorn_transform)
from .unbalanced import (UnbalancedDuals, UnbalancedParams, UnbalancedPlan, plan_from_duals,
                         unbalanced_duals, unbalanced_plan, uot, uot_dual_objective)

__version__ = "0.1.0"


def sigma_from_epsilon(epsilon):
    """Convert the entropic weight ``epsilon = 2 sigma^2`` to ``sigma``."""
    if not epsilon > 0:
        raise InvalidInput("epsilon must be positive")
    return (epsilon / 2.0) ** 0.5
