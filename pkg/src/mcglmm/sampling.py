"""Gaussian importance-sampling proposal for the standardized random effects.

Sampling works in the standardized effects v, where u = L v and the
prior on v is standard normal. The proposal is the Laplace-style
Gaussian centred at the posterior mode of v with precision

    P = (Z L)' W (Z L) + I,

the mode being located by damped iteratively reweighted least squares.
Importance weights use the exact proposal log-density (mean and
log-determinant included), normalized through log-sum-exp.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .covariance import LOG_2PI, CovarianceBundle
from .exceptions import NumericalError
from .model import Family, ModelData, conditional_log_lik, glm_score, working_weights

IRLS_TOL = 1e-6
IRLS_MAX_ITER = 100
MAX_HALVINGS = 10
ESS_FLOOR_FRACTION = 0.1


@dataclass(frozen=True)
class ProposalDistribution:
    """Posterior-mode Gaussian for v, with precision and its factor."""

    v_bar: np.ndarray
    precision: np.ndarray
    precision_chol: np.ndarray
    u_bar: np.ndarray
    converged: bool = True

    @property
    def logdet_precision(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.precision_chol))))


@dataclass(frozen=True)
class SampleSet:
    """Weighted Monte Carlo draws of the random effects.

    The trailing fields cache quantities that fall out of the weight
    computation (the Z u products, the conditional log-likelihood and
    the prior log-density at the parameters the draws were generated
    under) so downstream steps can avoid recomputing them.
    """

    v_draws: np.ndarray
    u_draws: np.ndarray
    log_weights_unnorm: np.ndarray
    weights: np.ndarray
    ess: float
    zu: np.ndarray | None = None
    cond_log_lik: np.ndarray | None = None
    prior_log_density: np.ndarray | None = None
    eval_beta: np.ndarray | None = None
    eval_params: object | None = None

    @property
    def size(self) -> int:
        return self.v_draws.shape[0]

    def zu_matrix(self, Z: np.ndarray) -> np.ndarray:
        """Z @ u' for all draws, using the cache when available."""
        if self.zu is not None:
            return self.zu
        return Z @ self.u_draws.T


def _joint_gradient(A, v, family, y, eta_fixed):
    """Gradient of the joint log-density in v: A' score(eta) - v."""
    eta = eta_fixed + A @ v
    return A.T @ glm_score(family, y, eta) - v


def posterior_mode_irls(
    data: ModelData,
    beta: np.ndarray,
    bundle: CovarianceBundle,
    family: Family,
    v_init: np.ndarray | None = None,
) -> ProposalDistribution:
    """Locate the posterior mode of v and return the Gaussian proposal.

    Runs damped Newton/IRLS steps: the step is halved (up to
    ``MAX_HALVINGS`` times) whenever it would increase the joint
    gradient norm. Stops once the accepted step satisfies
    max |dv| < IRLS_TOL; a warning flag is set if the iteration budget
    runs out first.
    """
    q = data.n_effects
    A = data.Z @ bundle.L
    eta_fixed = data.X @ beta
    v = np.zeros(q) if v_init is None else np.asarray(v_init, dtype=float).copy()

    converged = False
    grad = _joint_gradient(A, v, family, data.y, eta_fixed)
    grad_norm = float(np.linalg.norm(grad))
    for _ in range(IRLS_MAX_ITER):
        w = working_weights(family, eta_fixed + A @ v)
        if not np.all(np.isfinite(w)):
            raise NumericalError("non-finite working weights in posterior IRLS")
        precision = A.T @ (w[:, None] * A) + np.eye(q)
        try:
            factor = cho_factor(precision, lower=True)
        except np.linalg.LinAlgError as err:
            raise NumericalError("posterior precision not positive-definite") from err
        delta = cho_solve(factor, grad)
        for _ in range(MAX_HALVINGS):
            cand = v + delta
            cand_grad = _joint_gradient(A, cand, family, data.y, eta_fixed)
            cand_norm = float(np.linalg.norm(cand_grad))
            if cand_norm <= grad_norm or not np.isfinite(cand_norm):
                break
            delta = 0.5 * delta
        v = v + delta
        grad = _joint_gradient(A, v, family, data.y, eta_fixed)
        grad_norm = float(np.linalg.norm(grad))
        if np.max(np.abs(delta)) < IRLS_TOL:
            converged = True
            break
    if not converged:
        warnings.warn("posterior-mode IRLS did not converge; using last iterate")

    w = working_weights(family, eta_fixed + A @ v)
    precision = A.T @ (w[:, None] * A) + np.eye(q)
    try:
        chol = np.linalg.cholesky(precision)
    except np.linalg.LinAlgError as err:
        raise NumericalError("proposal precision not positive-definite") from err
    return ProposalDistribution(
        v_bar=v,
        precision=precision,
        precision_chol=chol,
        u_bar=bundle.L @ v,
        converged=converged,
    )


def draw_samples(
    proposal: ProposalDistribution,
    m: int,
    rng: np.random.Generator,
    eps: np.ndarray | None = None,
) -> np.ndarray:
    """Draw m rows of v from the proposal.

    With precision P = C C' (C lower triangular), v = v_bar + C^-T eps
    has exactly the proposal covariance P^-1. ``eps`` overrides the
    standard-normal draws for testing.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    q = proposal.v_bar.shape[0]
    if eps is None:
        eps = rng.standard_normal((m, q))
    shift = solve_triangular(proposal.precision_chol.T, eps.T, lower=False)
    return proposal.v_bar[None, :] + shift.T


def proposal_log_density(proposal: ProposalDistribution, v_rows: np.ndarray) -> np.ndarray:
    """Exact proposal log-density at each row of ``v_rows``."""
    q = proposal.v_bar.shape[0]
    dv = v_rows - proposal.v_bar[None, :]
    quad = np.sum((dv @ proposal.precision_chol) ** 2, axis=1)
    return -0.5 * q * LOG_2PI + 0.5 * proposal.logdet_precision - 0.5 * quad


def importance_weights(
    data: ModelData,
    beta: np.ndarray,
    bundle: CovarianceBundle,
    family: Family,
    proposal: ProposalDistribution,
    v_draws: np.ndarray,
    ess_floor_fraction: float = ESS_FLOOR_FRACTION,
) -> SampleSet:
    """Compute self-normalized importance weights for the draws.

    The unnormalized log-weight of draw k is the conditional
    log-likelihood at u_k = L v_k plus the prior log-density of u_k
    minus the proposal log-density of v_k. Normalization subtracts the
    maximum before exponentiating.
    """
    v_draws = np.atleast_2d(np.asarray(v_draws, dtype=float))
    u_draws = v_draws @ bundle.L.T
    zu = data.Z @ u_draws.T
    eta_mat = (data.X @ beta)[:, None] + zu
    cll = conditional_log_lik(family, data.y, eta_mat)
    # log N(L v; 0, L L') needs u' D^-1 u = ||L^-1 u||^2 = ||v||^2, so the
    # triangular solve in gaussian_logdensity_rows would only recover v
    q = bundle.L.shape[0]
    prior = -0.5 * q * LOG_2PI - 0.5 * bundle.logdet_D - 0.5 * np.sum(v_draws**2, axis=1)
    log_w = cll + prior - proposal_log_density(proposal, v_draws)

    if np.any(np.isnan(log_w)):
        raise NumericalError("NaN importance log-weight")
    top = np.max(log_w)
    if not np.isfinite(top):
        raise NumericalError("all importance log-weights are -inf")
    w = np.exp(log_w - top)
    weights = w / np.sum(w)
    ess = 1.0 / float(np.sum(weights**2))
    m = v_draws.shape[0]
    if ess < ess_floor_fraction * m:
        warnings.warn(f"effective sample size {ess:.1f} below {ess_floor_fraction:.0%} of m={m}")
    return SampleSet(
        v_draws=v_draws,
        u_draws=u_draws,
        log_weights_unnorm=log_w,
        weights=weights,
        ess=ess,
        zu=zu,
        cond_log_lik=cll,
        prior_log_density=prior,
        eval_beta=np.asarray(beta, dtype=float).copy(),
        eval_params=bundle.params,
    )
