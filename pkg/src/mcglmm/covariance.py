"""Random-effect covariance: Matern kernel, Cholesky bundle, Gaussian density.

The covariance matrix D is built from a Matern kernel with shape 1,

    k(d) = tau2 * (1 + d / lam) * exp(-d / lam),

as a function of Euclidean distance d. Parameters are carried on the
log scale throughout, and the derivative matrices stored in a bundle
are with respect to (log tau2, log lambda):

    dD/d(log tau2) = D            (D is linear in tau2)
    dD/d(log lam)  = lam * dD/dlam,  dD_ij/dlam = tau2 * d_ij^2 / lam^3 * exp(-d_ij / lam)

so downstream Newton code never handles raw-scale derivatives.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.spatial.distance import cdist

from .exceptions import NumericalError

LOG_2PI = float(np.log(2.0 * np.pi))

# Escalating relative jitter: 1e-10 * mean(diag) * 10**k for k = 0..6.
JITTER_BASE = 1e-10
JITTER_MAX_EXPONENT = 6


@dataclass(frozen=True)
class CovarianceParams:
    """Kernel parameters stored on the log scale."""

    log_tau2: float
    log_lambda: float

    @classmethod
    def from_raw(cls, tau2: float, lam: float) -> "CovarianceParams":
        if tau2 <= 0 or lam <= 0:
            raise ValueError("tau2 and lambda must be positive")
        return cls(log_tau2=float(np.log(tau2)), log_lambda=float(np.log(lam)))

    @property
    def tau2(self) -> float:
        return float(np.exp(self.log_tau2))

    @property
    def lam(self) -> float:
        return float(np.exp(self.log_lambda))

    def as_array(self) -> np.ndarray:
        return np.array([self.log_tau2, self.log_lambda])


@dataclass(frozen=True)
class CovarianceBundle:
    """Covariance matrix with its factorization and log-scale derivatives.

    D holds any jitter that was required to factorize, so L @ L.T
    reproduces D to rounding error; the derivative matrices exclude the
    jitter (its derivative with respect to the parameters is zero).
    """

    D: np.ndarray
    L: np.ndarray
    logdet_D: float
    dD: tuple[np.ndarray, np.ndarray]
    jitter_used: float
    params: CovarianceParams


def matern1(dist, tau2: float, lam: float):
    """Matern shape-1 kernel value at distance ``dist`` (scalar or array)."""
    r = np.asarray(dist, dtype=float) / lam
    value = tau2 * (1.0 + r) * np.exp(-r)
    return float(value) if np.isscalar(dist) else value


def chol_with_jitter(M: np.ndarray, context: str = "matrix") -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of M, adding escalating diagonal jitter on failure.

    Returns the factor and the jitter actually added. Raises
    NumericalError when the largest jitter still does not make the
    factorization succeed.
    """
    unit = JITTER_BASE * float(np.mean(np.diag(M)))
    if not np.isfinite(unit) or unit <= 0.0:
        unit = JITTER_BASE
    q = M.shape[0]
    for k in range(-1, JITTER_MAX_EXPONENT + 1):
        jitter = 0.0 if k < 0 else unit * 10.0**k
        try:
            L = np.linalg.cholesky(M if k < 0 else M + jitter * np.eye(q))
        except np.linalg.LinAlgError:
            continue
        return L, jitter
    raise NumericalError(
        f"{context} factorization failed even with jitter {unit * 10.0**JITTER_MAX_EXPONENT:.3g}"
    )


def build_bundle(coords: np.ndarray, params: CovarianceParams) -> CovarianceBundle:
    """Build D, its Cholesky factor and log-scale derivatives at ``params``.

    Escalating diagonal jitter is added if the plain factorization
    fails; the amount actually used is recorded. Duplicated coordinates
    only produce a warning since jitter keeps the factorization viable.
    """
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    tau2, lam = params.tau2, params.lam
    dist = cdist(coords, coords)
    q = coords.shape[0]
    if q > 1:
        off = dist[~np.eye(q, dtype=bool)]
        if np.any(off == 0.0):
            warnings.warn("duplicated coordinates: D is singular up to jitter")
    D = matern1(dist, tau2, lam)
    d_tau2 = D.copy()
    d_lam = tau2 * (dist**2 / lam**2) * np.exp(-dist / lam)

    try:
        L, jitter = chol_with_jitter(D, context="covariance")
    except NumericalError as err:
        raise NumericalError(
            f"covariance factorization failed at tau2={tau2:.6g}, lambda={lam:.6g}"
        ) from err
    if jitter > 0.0:
        D = D + jitter * np.eye(q)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return CovarianceBundle(
        D=D,
        L=L,
        logdet_D=logdet,
        dD=(d_tau2, d_lam),
        jitter_used=jitter,
        params=params,
    )


def gaussian_logdensity(u: np.ndarray, bundle: CovarianceBundle) -> float:
    """Log N(u; 0, D) evaluated through triangular solves against L."""
    u = np.asarray(u, dtype=float)
    q = bundle.L.shape[0]
    a = solve_triangular(bundle.L, u, lower=True)
    return -0.5 * q * LOG_2PI - 0.5 * bundle.logdet_D - 0.5 * float(a @ a)


def gaussian_logdensity_rows(U: np.ndarray, bundle: CovarianceBundle) -> np.ndarray:
    """Log N(u; 0, D) for each row of an (m, Q) matrix of vectors."""
    q = bundle.L.shape[0]
    A = solve_triangular(bundle.L, U.T, lower=True)
    quad = np.sum(A * A, axis=0)
    return -0.5 * q * LOG_2PI - 0.5 * bundle.logdet_D - 0.5 * quad
