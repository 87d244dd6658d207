"""Stochastic Newton-Raphson updates for the fixed and covariance parameters.

Score and information for each update are averages over the weighted
sample set. The covariance update works on the log-parameter scale
using the derivative matrices carried by the covariance bundle; all
matrix inverses go through Cholesky solves.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .covariance import CovarianceBundle, CovarianceParams, chol_with_jitter
from .exceptions import NumericalError
from .model import Family, ModelData, family_eval, working_weights
from .sampling import SampleSet

THETA_MAX_STEP = 1.0
THETA_FALLBACK_STEP = 0.1
MAX_HALVINGS = 10


@dataclass(frozen=True)
class ThetaStepWorkspace:
    """Score, expected information and cached traces for one theta step."""

    score: np.ndarray
    information: np.ndarray
    trace_d_inv_dd: np.ndarray
    trace_pairs: np.ndarray


def beta_step(
    data: ModelData, family: Family, beta: np.ndarray, samples: SampleSet
) -> tuple[np.ndarray, np.ndarray]:
    """One Newton step for beta averaged over the weighted draws.

    Returns the updated coefficients and the expected information
    sum_k w_k X' W_k X used to take the step.
    """
    X, y = data.X, data.y
    eta_mat = (X @ beta)[:, None] + samples.zu_matrix(data.Z)
    fe = family_eval(family, eta_mat)
    w = samples.weights
    yc = y[:, None]
    avg_weight = (fe.dmu_deta**2 / fe.var_y) @ w
    avg_score = ((yc - fe.mu) * fe.dmu_deta / fe.var_y) @ w

    info = X.T @ (avg_weight[:, None] * X)
    grad = X.T @ avg_score
    try:
        factor = cho_factor(info, lower=True)
    except np.linalg.LinAlgError as err:
        cond = np.linalg.cond(info)
        raise NumericalError(
            f"singular expected information for beta (cond={cond:.3g})"
        ) from err
    delta = cho_solve(factor, grad)
    for _ in range(MAX_HALVINGS):
        if np.all(np.isfinite(beta + delta)):
            return beta + delta, info
        delta = 0.5 * delta
    raise NumericalError("non-finite beta step after repeated halving")


def theta_score_and_information(
    samples: SampleSet,
    bundle: CovarianceBundle,
    uuT_override: np.ndarray | None = None,
) -> ThetaStepWorkspace:
    """Monte Carlo score and information for the log covariance parameters.

    score_i = -1/2 tr(D^-1 dD_i) + 1/2 E_w[u' D^-1 dD_i D^-1 u]
    M_ij    = -1/2 tr(D^-1 dD_i D^-1 dD_j)
              + E_w[tr(D^-1 u u' D^-1 dD_i D^-1 dD_j)]

    where dD_i are the log-scale derivative matrices. After one O(Q^3)
    factorization every per-sample term is an O(Q^2) quadratic form.
    ``uuT_override`` replaces each u u' by a fixed matrix (a test hook:
    with D itself, M reduces to the Fisher information of the Gaussian).
    """
    factor = (bundle.L, True)
    n_par = len(bundle.dD)
    B = [cho_solve(factor, dd) for dd in bundle.dD]
    traces = np.array([np.trace(b) for b in B])
    trace_pairs = np.empty((n_par, n_par))
    for i in range(n_par):
        for j in range(i, n_par):
            trace_pairs[i, j] = trace_pairs[j, i] = float(np.sum(B[i] * B[j].T))

    score = np.empty(n_par)
    info = np.empty((n_par, n_par))
    if uuT_override is not None:
        S = cho_solve(factor, uuT_override)
        for i in range(n_par):
            score[i] = -0.5 * traces[i] + 0.5 * float(np.sum(S * B[i].T))
            for j in range(i, n_par):
                second = float(np.sum(S * (B[i] @ B[j]).T))
                info[i, j] = info[j, i] = -0.5 * trace_pairs[i, j] + second
    else:
        w = samples.weights
        T = cho_solve(factor, samples.u_draws.T).T
        quad = [np.einsum("kq,kq->k", T @ dd, T) for dd in bundle.dD]
        for i in range(n_par):
            score[i] = -0.5 * traces[i] + 0.5 * float(quad[i] @ w)
            for j in range(i, n_par):
                h = bundle.dD[i] @ B[j]
                second = float(np.einsum("kq,kq->k", T @ h, T) @ w)
                info[i, j] = info[j, i] = -0.5 * trace_pairs[i, j] + second
    return ThetaStepWorkspace(
        score=score, information=info, trace_d_inv_dd=traces, trace_pairs=trace_pairs
    )


def _newton_direction(score: np.ndarray, info: np.ndarray) -> np.ndarray | None:
    """Newton step on the identifiable sub-block, None if nothing is usable.

    Parameters whose information diagonal is (numerically) zero carry
    no signal at the current point, so their coordinates are frozen and
    the solve runs on the remaining block.
    """
    scale = max(1.0, float(np.max(np.abs(np.diag(info)))))
    active = np.diag(info) > 1e-12 * scale
    if not np.any(active):
        return None
    sub = info[np.ix_(active, active)]
    try:
        factor = cho_factor(sub, lower=True)
    except np.linalg.LinAlgError:
        return None
    delta = np.zeros_like(score)
    delta[active] = cho_solve(factor, score[active])
    return delta


def theta_step(params: CovarianceParams, ws: ThetaStepWorkspace) -> CovarianceParams:
    """Trust-bounded Newton update of the log covariance parameters.

    Coordinates are clipped to +-THETA_MAX_STEP on the log scale. When
    the information has no positive-definite block the step falls back
    to scaled gradient ascent of length THETA_FALLBACK_STEP.
    """
    score = ws.score
    if np.all(score == 0.0):
        return params
    delta = _newton_direction(score, ws.information)
    if delta is None:
        delta = score / np.linalg.norm(score) * THETA_FALLBACK_STEP
    delta = np.clip(delta, -THETA_MAX_STEP, THETA_MAX_STEP)
    new = params.as_array() + delta
    if not np.all(np.isfinite(new)):
        raise NumericalError("non-finite covariance parameter update")
    return replace(params, log_tau2=float(new[0]), log_lambda=float(new[1]))


def gls_standard_errors(
    data: ModelData,
    family: Family,
    beta: np.ndarray,
    bundle: CovarianceBundle,
    v_bar: np.ndarray,
) -> np.ndarray:
    """Wald standard errors from the marginal working covariance.

    SE_j is the square root of the j-th diagonal entry of
    (X' Sigma^-1 X)^-1 with Sigma = W^-1 + Z D Z', W evaluated at the
    posterior mode of the random effects.
    """
    X, Z = data.X, data.Z
    eta = X @ beta + Z @ (bundle.L @ np.asarray(v_bar, dtype=float))
    w = working_weights(family, eta)
    sigma = np.diag(1.0 / w) + Z @ bundle.D @ Z.T
    L_sigma, _ = chol_with_jitter(sigma, context="marginal covariance")
    sinv_x = cho_solve((L_sigma, True), X)
    gram = X.T @ sinv_x
    try:
        factor = cho_factor(gram, lower=True)
    except np.linalg.LinAlgError as err:
        raise NumericalError("X' Sigma^-1 X not positive-definite") from err
    cov = cho_solve(factor, np.eye(gram.shape[0]))
    return np.sqrt(np.diag(cov))
