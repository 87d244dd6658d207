"""Scikit-learn style estimator wrapping the Monte Carlo ML fitter."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .covariance import CovarianceParams
from .fitter import FitConfig, fit
from .model import BINOMIAL, POISSON, Family, check_model_data, family_eval
from .stopping import SampleSizeConfig, StoppingConfig


class SpatialGLMM(BaseEstimator):
    """Spatial generalized linear mixed model fit by Monte Carlo ML.

    The model is y_i ~ G(h^-1(x_i' beta + z_i' u)) with u a zero-mean
    Gaussian random effect whose covariance is a Matern shape-1 kernel
    of the pairwise distances between locations. Estimation alternates
    importance-sampled Newton steps for the fixed effects and the
    covariance parameters until a Bayes-factor stopping rule fires.

    Parameters
    ----------
    family : str, default "poisson"
        "poisson" (log link) or "binomial" (logit link).
    tau2, lengthscale : float or None
        Starting values for the kernel variance and lengthscale; both
        None selects data-driven starts, otherwise both must be given.
    m_samples : int or None
        Monte Carlo draws per iteration; None applies the variance-share
        rule with proportion ``p_mc``.
    p_mc : float
        Target share of Monte Carlo variance in the total when choosing
        the number of draws.
    m_min, m_max : int
        Clamp for the chosen number of draws.
    t0 : float
        Prior expected iteration of convergence for the stopping rule.
    bf_threshold : float
        Bayes-factor threshold above which iteration stops.
    min_iter, max_iter : int
        Hard bounds on the number of outer iterations.
    seed : int
        Seed making the whole fit deterministic.
    record_trace : bool
        Keep the per-iteration diagnostics on the result object.

    Attributes
    ----------
    beta_ : fixed-effect estimates
    se_beta_ : GLS standard errors of beta_
    conf_int_ : 95 percent Wald intervals, one row per coefficient
    tau2_, lengthscale_ : covariance parameter estimates (raw scale)
    u_mean_ : posterior mode of the random effects
    u_var_mean_ : mean posterior variance of the random effects
    converged_, n_iter_ : stopping diagnostics
    result_ : the full FitResult
    """

    def __init__(
        self,
        family: str = POISSON,
        tau2: float | None = None,
        lengthscale: float | None = None,
        m_samples: int | None = None,
        p_mc: float = 0.1,
        m_min: int = 250,
        m_max: int = 5000,
        t0: float = 30.0,
        bf_threshold: float = 5.0,
        min_iter: int = 5,
        max_iter: int = 200,
        seed: int = 0,
        record_trace: bool = True,
    ):
        self.family = family
        self.tau2 = tau2
        self.lengthscale = lengthscale
        self.m_samples = m_samples
        self.p_mc = p_mc
        self.m_min = m_min
        self.m_max = m_max
        self.t0 = t0
        self.bf_threshold = bf_threshold
        self.min_iter = min_iter
        self.max_iter = max_iter
        self.seed = seed
        self.record_trace = record_trace

    def _build_family(self, n_obs: int, trials) -> Family:
        if self.family == POISSON:
            if trials is not None:
                raise ValueError("trials only apply to the binomial family")
            return Family.poisson()
        if self.family == BINOMIAL:
            if trials is None:
                raise ValueError("binomial family requires trials")
            if isinstance(trials, numbers.Number):
                trials = np.full(n_obs, float(trials))
            return Family.binomial(trials)
        raise ValueError(f"unknown family {self.family!r}")

    def _build_config(self) -> FitConfig:
        if (self.tau2 is None) != (self.lengthscale is None):
            raise ValueError("set both tau2 and lengthscale or neither")
        cov = (
            None
            if self.tau2 is None
            else CovarianceParams.from_raw(self.tau2, self.lengthscale)
        )
        return FitConfig(
            covariance_init=cov,
            stopping=StoppingConfig(
                t0=self.t0,
                bf_threshold=self.bf_threshold,
                min_iterations=self.min_iter,
                max_iterations=self.max_iter,
            ),
            sampling=SampleSizeConfig(
                p_mc=self.p_mc,
                m_min=self.m_min,
                m_max=self.m_max,
                m_fixed=self.m_samples,
            ),
            seed=self.seed,
            record_trace=self.record_trace,
        )

    def fit(self, X, y, coords=None, Z=None, trials=None):
        """Fit the model.

        X is the n x P fixed-effect design (include the intercept
        column explicitly), coords the locations of the random effects.
        Z defaults to the identity, one random effect per observation,
        in which case coords must have one row per observation.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if coords is None:
            raise ValueError("coords is required")
        if Z is None:
            Z = np.eye(X.shape[0])
        family = self._build_family(X.shape[0], trials)
        data = check_model_data(y, X, Z, coords, family)
        result = fit(data, family, self._build_config())

        self.result_ = result
        self.beta_ = result.beta_hat
        self.se_beta_ = result.se_beta
        self.conf_int_ = result.wald_ci_beta
        self.tau2_ = result.theta_hat.tau2
        self.lengthscale_ = result.theta_hat.lam
        self.u_mean_ = result.re_posterior_mean
        self.u_var_mean_ = result.re_posterior_var_mean
        self.converged_ = result.converged
        self.n_iter_ = result.n_iterations
        self._family_obj = family
        return self

    def predict(self, X, Z=None):
        """Mean response at X using the fitted random-effect mode.

        Z maps rows of X onto the fitted random effects and defaults to
        the identity (valid when X has one row per fitted effect).
        """
        if not hasattr(self, "beta_"):
            raise NotFittedError("call fit before predict")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if Z is None:
            if X.shape[0] != self.u_mean_.shape[0]:
                raise ValueError("Z is required when X rows differ from fitted effects")
            Z = np.eye(X.shape[0])
        eta = X @ self.beta_ + np.asarray(Z, dtype=float) @ self.u_mean_
        return family_eval(self._family_obj, eta).mu
