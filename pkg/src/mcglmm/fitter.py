"""Driver for the Monte Carlo maximum likelihood loop.

Each outer iteration: locate the posterior mode and draw a weighted
sample of random effects at the current parameters, take one Newton
step for the fixed effects, one for the covariance parameters, then
feed the estimated log-likelihood improvement to the stopping rule.
The Monte Carlo sample size is fixed before the loop from the error
calculus at the starting values.
"""

from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_triangular
from scipy.spatial.distance import pdist

from .covariance import CovarianceBundle, CovarianceParams, build_bundle
from .exceptions import NumericalError
from .model import Family, ModelData, family_eval, glm_fit
from .newton import beta_step, gls_standard_errors, theta_score_and_information, theta_step
from .sampling import draw_samples, importance_weights, posterior_mode_irls
from .stopping import (
    IterationRecord,
    SampleSizeConfig,
    StoppingConfig,
    delta_loglik_stats,
    mc_error_and_sample_size,
    stopping_decision,
)

WALD_Z = 1.959964
TAU2_FLOOR = 0.1
LAMBDA_START_FRACTION = 0.2


@dataclass(frozen=True)
class FitConfig:
    covariance_init: CovarianceParams | None = None
    stopping: StoppingConfig = field(default_factory=StoppingConfig)
    sampling: SampleSizeConfig = field(default_factory=SampleSizeConfig)
    seed: int = 0
    record_trace: bool = True


@dataclass(frozen=True)
class FitResult:
    beta_hat: np.ndarray
    theta_hat: CovarianceParams
    se_beta: np.ndarray
    wald_ci_beta: np.ndarray
    theta_information: np.ndarray
    converged: bool
    n_iterations: int
    trace: list[IterationRecord]
    re_posterior_mean: np.ndarray
    re_posterior_var_mean: float
    m_samples: int
    wall_time_seconds: float

    @property
    def tau2(self) -> float:
        return self.theta_hat.tau2

    @property
    def lam(self) -> float:
        return self.theta_hat.lam


def initial_values(
    data: ModelData, family: Family, config: FitConfig
) -> tuple[np.ndarray, CovarianceParams]:
    """Starting values: ordinary-GLM coefficients plus a covariance heuristic.

    Unless the config pins the covariance parameters, tau2 starts at
    the variance of the working residuals on the linear-predictor scale
    (floored at TAU2_FLOOR) and lambda at LAMBDA_START_FRACTION times
    the largest pairwise distance between locations.
    """
    beta0 = glm_fit(data, family)
    if config.covariance_init is not None:
        return beta0, config.covariance_init
    fe = family_eval(family, data.X @ beta0)
    resid = (data.y - fe.mu) / fe.dmu_deta
    tau2 = max(float(np.var(resid)), TAU2_FLOOR)
    if data.coords.shape[0] > 1:
        max_dist = float(np.max(pdist(data.coords)))
    else:
        max_dist = 0.0
    lam = LAMBDA_START_FRACTION * max_dist if max_dist > 0.0 else 1.0
    return beta0, CovarianceParams.from_raw(tau2, lam)


@contextmanager
def _step(name: str, iteration: int | None, last_params):
    try:
        yield
    except NumericalError as err:
        if err.step is None:
            err.step = name
            err.iteration = iteration
            err.last_params = last_params
        raise


def fit(data: ModelData, family: Family, config: FitConfig) -> FitResult:
    """Run the full Monte Carlo Newton-Raphson fit.

    Deterministic for a fixed config seed. Numerical failures abort
    with the failing step, iteration index and last valid parameters
    attached to the raised NumericalError; hitting the iteration cap
    instead returns a result flagged as not converged.
    """
    start = time.perf_counter()
    beta, params = initial_values(data, family, config)
    with _step("initial-covariance", None, (beta, params)):
        bundle = build_bundle(data.coords, params)
    with _step("initial-posterior-mode", None, (beta, params)):
        proposal = posterior_mode_irls(data, beta, bundle, family)

    if config.sampling.m_fixed is not None:
        m = int(config.sampling.m_fixed)
    else:
        with _step("sample-size-rule", None, (beta, params)):
            m, _, _ = mc_error_and_sample_size(
                data, family, beta, bundle, proposal, config.sampling
            )

    trace: list[IterationRecord] = []
    v_warm = proposal.v_bar
    converged = False
    n_iter = 0
    last_ws = None
    for t in range(1, config.stopping.max_iterations + 1):
        n_iter = t
        last_good = (beta.copy(), params)
        rng = np.random.default_rng((config.seed, t))
        with _step("posterior-mode", t, last_good):
            proposal = posterior_mode_irls(data, beta, bundle, family, v_init=v_warm)
        v_warm = proposal.v_bar
        v_draws = draw_samples(proposal, m, rng)
        with _step("importance-weights", t, last_good):
            samples = importance_weights(data, beta, bundle, family, proposal, v_draws)
        beta_prev, params_prev, bundle_prev = beta, params, bundle
        with _step("beta-step", t, last_good):
            beta, _ = beta_step(data, family, beta, samples)
        with _step("theta-step", t, last_good):
            last_ws = theta_score_and_information(samples, bundle)
            params = theta_step(params, last_ws)
            bundle = build_bundle(data.coords, params)
        delta_mean, delta_se = delta_loglik_stats(
            samples, data, family, bundle, bundle_prev, beta, beta_prev
        )
        decision = stopping_decision(t, delta_mean, delta_se, config.stopping)
        if config.record_trace:
            trace.append(
                replace(
                    decision.record,
                    beta=beta.copy(),
                    log_tau2=params.log_tau2,
                    log_lambda=params.log_lambda,
                    ess=samples.ess,
                    m_used=m,
                )
            )
        if decision.stop:
            converged = decision.converged
            break

    with _step("final-posterior-mode", n_iter, (beta, params)):
        proposal = posterior_mode_irls(data, beta, bundle, family, v_init=v_warm)
    with _step("standard-errors", n_iter, (beta, params)):
        se = gls_standard_errors(data, family, beta, bundle, proposal.v_bar)
    re_mean, re_var = random_effect_summary(data, family, beta, bundle, proposal=proposal)
    ci = np.column_stack((beta - WALD_Z * se, beta + WALD_Z * se))
    return FitResult(
        beta_hat=beta,
        theta_hat=params,
        se_beta=se,
        wald_ci_beta=ci,
        theta_information=last_ws.information if last_ws is not None else np.full((2, 2), np.nan),
        converged=converged,
        n_iterations=n_iter,
        trace=trace,
        re_posterior_mean=re_mean,
        re_posterior_var_mean=re_var,
        m_samples=m,
        wall_time_seconds=time.perf_counter() - start,
    )


def random_effect_summary(
    data: ModelData,
    family: Family,
    beta_hat: np.ndarray,
    bundle_hat: CovarianceBundle,
    proposal=None,
) -> tuple[np.ndarray, float]:
    """Posterior mode of u and the mean posterior variance per coordinate.

    The posterior covariance of u under the Gaussian approximation is
    L P^-1 L' with P the proposal precision; only its diagonal mean is
    reported.
    """
    if proposal is None:
        proposal = posterior_mode_irls(data, beta_hat, bundle_hat, family)
    lc = solve_triangular(proposal.precision_chol, bundle_hat.L.T, lower=True)
    var_diag = np.sum(lc**2, axis=0)
    return proposal.u_bar, float(np.mean(var_diag))
