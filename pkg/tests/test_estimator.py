"""Scikit-learn estimator facade."""

import warnings

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mcglmm import SpatialGLMM, simulate_scenario
from mcglmm.simulate import POISSON_GRID, ScenarioSpec


def _small_dataset():
    spec = ScenarioSpec(
        design=POISSON_GRID, beta=(1.0, 0.3), theta=(0.5, 0.2),
        replicates=1, base_seed=3, cells_per_dim=4,
    )
    data, family = simulate_scenario(spec, 0)
    return data


@pytest.fixture(scope="module")
def fitted():
    data = _small_dataset()
    est = SpatialGLMM(family="poisson", m_samples=150, max_iter=30, seed=7)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        est.fit(data.X, data.y, coords=data.coords)
    return est, data


class TestEstimatorApi:
    def test_get_set_params_roundtrip(self):
        est = SpatialGLMM(t0=12.0, seed=5)
        params = est.get_params()
        assert params["t0"] == 12.0
        cloned = clone(est)
        assert cloned.get_params() == params

    def test_fit_sets_attributes(self, fitted):
        est, data = fitted
        assert est.beta_.shape == (2,)
        assert est.se_beta_.shape == (2,)
        assert est.conf_int_.shape == (2, 2)
        assert est.tau2_ > 0 and est.lengthscale_ > 0
        assert est.u_mean_.shape == (data.n_effects,)
        assert isinstance(est.converged_, bool)
        assert est.n_iter_ == est.result_.n_iterations

    def test_predict_in_sample(self, fitted):
        est, data = fitted
        mu = est.predict(data.X)
        assert mu.shape == (data.n_obs,)
        assert np.all(mu > 0)

    def test_predict_before_fit_raises(self):
        with pytest.raises(NotFittedError):
            SpatialGLMM().predict(np.ones((3, 2)))

    def test_requires_coords(self):
        est = SpatialGLMM()
        with pytest.raises(ValueError, match="coords"):
            est.fit(np.ones((4, 1)), np.zeros(4))

    def test_rejects_half_specified_covariance(self):
        data = _small_dataset()
        est = SpatialGLMM(tau2=1.0)
        with pytest.raises(ValueError, match="both"):
            est.fit(data.X, data.y, coords=data.coords)

    def test_rejects_unknown_family(self):
        data = _small_dataset()
        with pytest.raises(ValueError, match="family"):
            SpatialGLMM(family="gamma").fit(data.X, data.y, coords=data.coords)

    def test_binomial_requires_trials(self):
        data = _small_dataset()
        with pytest.raises(ValueError, match="trials"):
            SpatialGLMM(family="binomial").fit(data.X, data.y, coords=data.coords)

    def test_binomial_scalar_trials_broadcast(self):
        rng = np.random.default_rng(12)
        n = 16
        X = np.column_stack((np.ones(n), rng.normal(size=n)))
        y = rng.binomial(10, 0.4, size=n).astype(float)
        coords = rng.uniform(size=(n, 2))
        est = SpatialGLMM(family="binomial", m_samples=100, max_iter=15, seed=1)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            est.fit(X, y, coords=coords, trials=10)
        assert est.beta_.shape == (2,)

    def test_seed_reproducibility(self):
        data = _small_dataset()
        kwargs = dict(family="poisson", m_samples=120, max_iter=20, seed=42)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            a = SpatialGLMM(**kwargs).fit(data.X, data.y, coords=data.coords)
            b = SpatialGLMM(**kwargs).fit(data.X, data.y, coords=data.coords)
        np.testing.assert_array_equal(a.beta_, b.beta_)
        assert a.tau2_ == b.tau2_
