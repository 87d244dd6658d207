"""Observation model: families, links, likelihoods and the ordinary GLM.

Two canonical-link families are supported: Poisson with log link and
Binomial with logit link. Linear predictors are clamped to ``ETA_MAX``
in absolute value before exponentiation so that means, weights and
log-likelihoods stay finite for any finite input.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, gammaln
from sklearn.exceptions import ConvergenceWarning

ETA_MAX = 30.0

POISSON = "poisson"
BINOMIAL = "binomial"


@dataclass(frozen=True)
class Family:
    """Response distribution plus its fixed canonical link.

    ``trials`` is required for the binomial family (all ones for
    Bernoulli data) and must be absent for Poisson.
    """

    kind: str
    trials: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in (POISSON, BINOMIAL):
            raise ValueError(f"unknown family kind {self.kind!r}")
        if self.kind == BINOMIAL:
            if self.trials is None:
                raise ValueError("binomial family requires a trials vector")
            trials = np.asarray(self.trials, dtype=float)
            if trials.ndim != 1 or trials.size == 0:
                raise ValueError("trials must be a nonempty 1-d vector")
            if np.any(trials < 1) or np.any(trials != np.round(trials)):
                raise ValueError("every trial count must be an integer >= 1")
            object.__setattr__(self, "trials", trials)
        elif self.trials is not None:
            raise ValueError("trials only apply to the binomial family")

    @classmethod
    def poisson(cls) -> "Family":
        return cls(POISSON)

    @classmethod
    def binomial(cls, trials) -> "Family":
        return cls(BINOMIAL, np.asarray(trials, dtype=float))


@dataclass(frozen=True)
class FamilyEval:
    """Mean, mean derivative and conditional variance at a linear predictor."""

    mu: np.ndarray
    dmu_deta: np.ndarray
    var_y: np.ndarray


@dataclass(frozen=True)
class ModelData:
    """Immutable container for one dataset.

    y      : length-n response vector of nonnegative counts
    X      : n x P fixed-effect design matrix
    Z      : n x Q random-effect design matrix
    coords : Q x d matrix of random-effect locations
    """

    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    coords: np.ndarray

    @property
    def n_obs(self) -> int:
        return self.y.shape[0]

    @property
    def n_fixed(self) -> int:
        return self.X.shape[1]

    @property
    def n_effects(self) -> int:
        return self.Z.shape[1]


def check_model_data(y, X, Z, coords, family: Family) -> ModelData:
    """Validate raw arrays and assemble a ModelData.

    Checks dimensions, finiteness, response validity for the family and
    (cheaply) that X has full column rank. Raises ValueError with a
    descriptive message on the first violation.
    """
    y = np.asarray(y, dtype=float).ravel()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    n = y.shape[0]
    if n < 1:
        raise ValueError("empty response vector")
    if X.shape[0] != n:
        raise ValueError(f"X has {X.shape[0]} rows but y has {n} entries")
    if Z.shape[0] != n:
        raise ValueError(f"Z has {Z.shape[0]} rows but y has {n} entries")
    if coords.shape[0] != Z.shape[1]:
        raise ValueError(
            f"coords has {coords.shape[0]} rows but Z has {Z.shape[1]} columns"
        )
    for name, arr in (("y", y), ("X", X), ("Z", Z), ("coords", coords)):
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{name} contains non-finite values")
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise ValueError("X does not have full column rank")
    validate_response(family, y)
    return ModelData(y=y, X=X, Z=Z, coords=coords)


def validate_response(family: Family, y: np.ndarray) -> None:
    """Raise ValueError if y is invalid for the family."""
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        bad = int(np.argmax(y < 0))
        raise ValueError(f"negative response at row {bad}")
    if np.any(y != np.round(y)):
        bad = int(np.argmax(y != np.round(y)))
        raise ValueError(f"non-integer response at row {bad}")
    if family.kind == BINOMIAL:
        if y.shape != family.trials.shape:
            raise ValueError(
                f"response length {y.shape[0]} does not match "
                f"trials length {family.trials.shape[0]}"
            )
        if np.any(y > family.trials):
            bad = int(np.argmax(y > family.trials))
            raise ValueError(f"response exceeds trials at row {bad}")


def linear_predictor(beta: np.ndarray, u: np.ndarray, data: ModelData) -> np.ndarray:
    """Return X @ beta + Z @ u."""
    beta = np.asarray(beta, dtype=float)
    u = np.asarray(u, dtype=float)
    if beta.shape != (data.n_fixed,):
        raise ValueError(
            f"beta has shape {beta.shape}, expected ({data.n_fixed},)"
        )
    if u.shape != (data.n_effects,):
        raise ValueError(f"u has shape {u.shape}, expected ({data.n_effects},)")
    return data.X @ beta + data.Z @ u


def family_eval(family: Family, eta: np.ndarray) -> FamilyEval:
    """Evaluate mean, its eta-derivative and Var(y | u) at eta.

    eta is clamped to [-ETA_MAX, ETA_MAX] first, so all outputs are
    finite and the variance strictly positive for any finite input.
    ``eta`` may be an (n, m) matrix of candidate linear predictors.
    """
    eta = np.clip(np.asarray(eta, dtype=float), -ETA_MAX, ETA_MAX)
    if family.kind == POISSON:
        mu = np.exp(eta)
        return FamilyEval(mu=mu, dmu_deta=mu, var_y=mu)
    trials = family.trials if eta.ndim == 1 else family.trials[:, None]
    p = expit(eta)
    v = trials * p * (1.0 - p)
    return FamilyEval(mu=trials * p, dmu_deta=v, var_y=v)


def working_weights(family: Family, eta: np.ndarray) -> np.ndarray:
    """Diagonal of the GLM iterated weight matrix, (dmu/deta)^2 / Var(y|u).

    Both supported links are canonical, so this equals dmu/deta.
    """
    fe = family_eval(family, eta)
    return fe.dmu_deta**2 / fe.var_y


def glm_score(family: Family, y: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Elementwise score (y - mu) * (dmu/deta) / Var(y|u).

    Reduces to y - mu for the canonical links implemented here; the
    general form is kept so the algebra is explicit.
    """
    fe = family_eval(family, eta)
    return (y - fe.mu) * fe.dmu_deta / fe.var_y


def conditional_log_lik(family: Family, y: np.ndarray, eta: np.ndarray) -> float | np.ndarray:
    """Log-likelihood of y given the linear predictor, constants included.

    Normalizing constants (log-factorials, log binomial coefficients)
    are included so values are comparable across parameter settings.
    ``eta`` may also be an (n, m) matrix of candidate linear predictors,
    in which case a length-m vector is returned.
    """
    y = np.asarray(y, dtype=float)
    validate_response(family, y)
    eta = np.clip(np.asarray(eta, dtype=float), -ETA_MAX, ETA_MAX)
    matrix = eta.ndim == 2
    yc = y[:, None] if matrix else y
    if family.kind == POISSON:
        terms = yc * eta - np.exp(eta)
        const = -np.sum(gammaln(y + 1.0))
    else:
        m = family.trials
        softplus = np.maximum(eta, 0.0) + np.log1p(np.exp(-np.abs(eta)))
        terms = yc * eta - (m[:, None] if matrix else m) * softplus
        const = np.sum(gammaln(m + 1.0) - gammaln(y + 1.0) - gammaln(m - y + 1.0))
    total = np.sum(terms, axis=0) + const
    return total if matrix else float(total)


def glm_fit(data: ModelData, family: Family, max_iter: int = 50, tol: float = 1e-8) -> np.ndarray:
    """Fit the ordinary GLM (no random effects) by IRLS.

    Returns the coefficient vector; emits a ConvergenceWarning and
    returns the last iterate if max |delta beta| has not dropped below
    ``tol`` within ``max_iter`` iterations.
    """
    y, X = data.y, data.X
    validate_response(family, y)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise ValueError("X does not have full column rank")
    if family.kind == POISSON:
        eta = np.log(y + 0.5)
    else:
        eta = np.log((y + 0.5) / (family.trials - y + 0.5))
    eta = np.clip(eta, -ETA_MAX, ETA_MAX)
    beta = None
    for _ in range(max_iter):
        fe = family_eval(family, eta)
        w = fe.dmu_deta**2 / fe.var_y
        z = eta + (y - fe.mu) / fe.dmu_deta
        sw = np.sqrt(w)
        beta_new, *_ = np.linalg.lstsq(sw[:, None] * X, sw * z, rcond=None)
        if beta is not None and np.max(np.abs(beta_new - beta)) < tol:
            return beta_new
        beta = beta_new
        eta = np.clip(X @ beta, -ETA_MAX, ETA_MAX)
    warnings.warn("GLM IRLS did not converge", ConvergenceWarning)
    return beta
