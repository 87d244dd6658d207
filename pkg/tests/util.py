"""Shared builders for small test instances."""

from __future__ import annotations

import numpy as np

from mcglmm import CovarianceParams, Family, ModelData
from mcglmm.covariance import build_bundle


def poisson_instance(seed=0, n=10, q=5, beta=(0.5, 0.2), tau2=0.8, lam=0.3):
    """Small Poisson dataset with a random Z and a latent field."""
    rng = np.random.default_rng(seed)
    X = np.column_stack((np.ones(n), rng.normal(size=n)))
    Z = rng.uniform(0.0, 1.0, size=(n, q))
    coords = rng.uniform(size=(q, 2))
    params = CovarianceParams.from_raw(tau2, lam)
    bundle = build_bundle(coords, params)
    u = bundle.L @ rng.standard_normal(q)
    eta = X @ np.asarray(beta) + Z @ u
    y = rng.poisson(np.exp(eta)).astype(float)
    data = ModelData(y=y, X=X, Z=Z, coords=coords)
    return data, Family.poisson(), params, bundle


def binomial_instance(seed=0, n=12, q=4, trials=20, beta=(0.2, -0.3), tau2=0.5, lam=0.4):
    """Small binomial dataset with identity-block Z."""
    rng = np.random.default_rng(seed)
    X = np.column_stack((np.ones(n), rng.normal(size=n)))
    Z = np.zeros((n, q))
    Z[np.arange(n), rng.integers(0, q, size=n)] = 1.0
    coords = rng.uniform(size=(q, 2))
    params = CovarianceParams.from_raw(tau2, lam)
    bundle = build_bundle(coords, params)
    u = bundle.L @ rng.standard_normal(q)
    eta = X @ np.asarray(beta) + Z @ u
    p = 1.0 / (1.0 + np.exp(-eta))
    family = Family.binomial(np.full(n, float(trials)))
    y = rng.binomial(trials, p).astype(float)
    data = ModelData(y=y, X=X, Z=Z, coords=coords)
    return data, family, params, bundle
