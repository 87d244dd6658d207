"""Stopping rule, expected convergence time and Monte Carlo sample sizing.

The stopping rule combines a one-sided test of "no further improvement
in the log-likelihood" with a prior probability of convergence that
grows with the iteration count,

    pi0(t) = 1 - exp(-(t / t0)^2),

a Weibull-shaped curve with expected convergence time t0. The Bayes
factor in favour of having converged is

    BF = (1 - p) / p * pi0 / (1 - pi0)

where p is the one-sided p-value of the mean improvement being
negative; iteration stops once BF exceeds a threshold (never before a
minimum number of iterations, always at the maximum).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import ndtr

from .covariance import CovarianceBundle, chol_with_jitter, gaussian_logdensity_rows
from .model import Family, ModelData, conditional_log_lik, working_weights
from .sampling import ProposalDistribution, SampleSet

T0_FLOOR = 5.0


@dataclass(frozen=True)
class StoppingConfig:
    t0: float = 30.0
    bf_threshold: float = 5.0
    min_iterations: int = 5
    max_iterations: int = 200

    def __post_init__(self):
        if self.t0 <= 0:
            raise ValueError("t0 must be positive")
        if self.bf_threshold <= 1:
            raise ValueError("bf_threshold must exceed 1")
        if not 0 < self.min_iterations < self.max_iterations:
            raise ValueError("need 0 < min_iterations < max_iterations")


@dataclass(frozen=True)
class SampleSizeConfig:
    p_mc: float = 0.1
    m_min: int = 250
    m_max: int = 5000
    m_fixed: int | None = None

    def __post_init__(self):
        if not 0.0 < self.p_mc < 1.0:
            raise ValueError("p_mc must lie in (0, 1)")
        if self.m_min < 50:
            raise ValueError("m_min must be at least 50")
        if self.m_max < self.m_min:
            raise ValueError("m_max must be >= m_min")


@dataclass(frozen=True)
class IterationRecord:
    """One row of the fit trace."""

    t: int
    delta_mean: float
    delta_se: float
    p_value: float
    prior_pi0: float
    log_bf: float
    beta: np.ndarray | None = None
    log_tau2: float = math.nan
    log_lambda: float = math.nan
    ess: float = math.nan
    m_used: int = 0


@dataclass(frozen=True)
class StopDecision:
    stop: bool
    converged: bool
    record: IterationRecord


def delta_loglik_stats(
    samples: SampleSet,
    data: ModelData,
    family: Family,
    bundle_t: CovarianceBundle,
    bundle_prev: CovarianceBundle,
    beta_t: np.ndarray,
    beta_prev: np.ndarray,
) -> tuple[float, float]:
    """Weighted mean and standard error of the per-sample log-joint change.

    For each draw u_k of the current iteration the change is the joint
    log-density at the new parameters minus the joint log-density at
    the previous ones; the mean uses the normalized weights w_k and the
    standard error is sqrt(sum_k w_k^2 (delta_k - mean)^2).
    """
    U = samples.u_draws
    zu = samples.zu_matrix(data.Z)
    new = conditional_log_lik(
        family, data.y, (data.X @ beta_t)[:, None] + zu
    ) + gaussian_logdensity_rows(U, bundle_t)
    # the previous-parameter terms are usually exactly what the weight
    # computation already evaluated; recompute only when they are not
    cached = (
        samples.cond_log_lik is not None
        and samples.eval_beta is not None
        and np.array_equal(samples.eval_beta, beta_prev)
        and samples.eval_params == bundle_prev.params
    )
    if cached:
        old = samples.cond_log_lik + samples.prior_log_density
    else:
        old = conditional_log_lik(
            family, data.y, (data.X @ beta_prev)[:, None] + zu
        ) + gaussian_logdensity_rows(U, bundle_prev)
    delta = new - old
    w = samples.weights
    mean = float(w @ delta)
    se = float(np.sqrt(np.sum(w**2 * (delta - mean) ** 2)))
    return mean, se


def convergence_prior(t: float, t0: float) -> float:
    """Prior probability of having converged by iteration t."""
    return float(-np.expm1(-((t / t0) ** 2)))


def stopping_decision(
    t: int, delta_mean: float, delta_se: float, config: StoppingConfig
) -> StopDecision:
    """Evaluate the Bayes-factor stopping rule at iteration t.

    Returns the decision plus the trace record holding the p-value,
    prior and log Bayes factor. ``converged`` is true only when the
    stop fires through the Bayes factor rather than the iteration cap.
    """
    if delta_se > 0.0:
        p = float(ndtr(delta_mean / delta_se))
    elif delta_mean < 0.0:
        p = 0.0
    elif delta_mean > 0.0:
        p = 1.0
    else:
        p = 0.5
    pi0 = convergence_prior(t, config.t0)
    if pi0 <= 0.0:
        log_bf = -math.inf
    else:
        # log(1 - pi0) = -(t/t0)^2 exactly, by construction of the prior
        log_prior_odds = math.log(pi0) + (t / config.t0) ** 2
        if p == 0.0:
            log_data_odds = math.inf
        elif p == 1.0:
            log_data_odds = -math.inf
        else:
            log_data_odds = math.log1p(-p) - math.log(p)
        log_bf = log_data_odds + log_prior_odds
    bf_stop = t >= config.min_iterations and log_bf > math.log(config.bf_threshold)
    stop = bf_stop or t >= config.max_iterations
    record = IterationRecord(
        t=t,
        delta_mean=delta_mean,
        delta_se=delta_se,
        p_value=p,
        prior_pi0=pi0,
        log_bf=log_bf,
    )
    return StopDecision(stop=stop, converged=bf_stop, record=record)


def expected_convergence_time(
    kappa: float,
    start_distance: float,
    n_params: int,
    sigma2_mc: float,
    lambda_min: float,
    m: int,
) -> float:
    """Rough expected iteration count for the stochastic Newton scheme.

    t0 = kappa/2 * log( (start_distance / n_params)
                        / sqrt(sigma2_mc / (lambda_min * m)) ),

    floored at T0_FLOOR: once the starting distance is within the
    Monte Carlo noise the formula carries no information.
    """
    if min(kappa, start_distance, n_params, sigma2_mc, lambda_min, m) <= 0:
        raise ValueError("all arguments must be positive")
    noise = math.sqrt(sigma2_mc / (lambda_min * m))
    arg = (start_distance / n_params) / noise
    if arg <= 1.0:
        return T0_FLOOR
    return max(0.5 * kappa * math.log(arg), T0_FLOOR)


def required_samples(ratios, p_mc: float, m_min: int, m_max: int) -> int:
    """Monte Carlo sample count keeping the MC variance share below p_mc.

    m = (1 - p)/p * max_i ratio_i, rounded up and clamped to
    [m_min, m_max]; ratio_i is the MC-to-total variance ratio of
    parameter i.
    """
    worst = max(float(r) for r in ratios) if len(ratios) else 0.0
    m = math.ceil((1.0 - p_mc) / p_mc * worst)
    return int(min(max(m, m_min), m_max))


def mc_error_and_sample_size(
    data: ModelData,
    family: Family,
    beta: np.ndarray,
    bundle: CovarianceBundle,
    proposal: ProposalDistribution,
    config: SampleSizeConfig,
) -> tuple[int, np.ndarray, np.ndarray]:
    """Monte Carlo error matrices and the implied per-iteration sample size.

    With W evaluated at the posterior mode and K = Z'WZ + D^-1:

        A_i        = D^-1 dD_i D^-1 K^-1 D^-1 dD_i D^-1
        V_theta_ii = tr(A_i) + 2 u_bar' A_i u_bar
        V_beta     = X'WZ K^-1 Z'WX

    The MC covariances are M^-1 V M^-1 with M the corresponding
    expected information; the sample size applies the (1-p)/p rule to
    the worst diagonal ratio across all parameters. ``m_fixed``
    short-circuits the rule but the matrices are still returned.
    """
    X, Z = data.X, data.Z
    q = data.n_effects
    eta = X @ beta + Z @ proposal.u_bar
    w = working_weights(family, eta)

    factor_d = (bundle.L, True)
    d_inv = cho_solve(factor_d, np.eye(q))
    K = Z.T @ (w[:, None] * Z) + d_inv
    L_k, _ = chol_with_jitter(K, context="Z'WZ + D^-1")
    k_inv = cho_solve((L_k, True), np.eye(q))

    n_par = len(bundle.dD)
    v_theta = np.empty(n_par)
    fisher = np.empty((n_par, n_par))
    B = [cho_solve(factor_d, dd) for dd in bundle.dD]
    C = [d_inv @ dd @ d_inv for dd in bundle.dD]
    for i in range(n_par):
        a = C[i] @ k_inv @ C[i]
        v_theta[i] = float(np.trace(a) + 2.0 * proposal.u_bar @ a @ proposal.u_bar)
        for j in range(i, n_par):
            fisher[i, j] = fisher[j, i] = 0.5 * float(np.sum(B[i] * B[j].T))
    fisher_inv = _inv_or_pinv(fisher)
    m_theta_mc = fisher_inv @ np.diag(v_theta) @ fisher_inv

    xwz = X.T @ (w[:, None] * Z)
    v_beta = xwz @ k_inv @ xwz.T
    info_beta = X.T @ (w[:, None] * X)
    info_beta_inv = _inv_or_pinv(info_beta)
    m_beta_mc = info_beta_inv @ v_beta @ info_beta_inv

    if config.m_fixed is not None:
        return int(config.m_fixed), m_beta_mc, m_theta_mc
    ratios = [
        m_theta_mc[i, i] / fisher[i, i] for i in range(n_par) if fisher[i, i] > 0.0
    ]
    ratios += [
        m_beta_mc[j, j] / info_beta[j, j]
        for j in range(info_beta.shape[0])
        if info_beta[j, j] > 0.0
    ]
    m = required_samples(ratios, config.p_mc, config.m_min, config.m_max)
    return m, m_beta_mc, m_theta_mc


def _inv_or_pinv(mat: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.inv(mat)
    except np.linalg.LinAlgError:
        return np.linalg.pinv(mat)
