"""Families, likelihoods and the ordinary GLM."""

import math

import numpy as np
import pytest
from scipy.optimize import minimize

from mcglmm import (
    Family,
    ModelData,
    check_model_data,
    conditional_log_lik,
    family_eval,
    glm_fit,
    linear_predictor,
    working_weights,
)
from mcglmm.model import glm_score

from util import poisson_instance


class TestLinearPredictor:
    def test_zero_case(self):
        data = ModelData(
            y=np.zeros(3),
            X=np.ones((3, 2)),
            Z=np.ones((3, 2)),
            coords=np.zeros((2, 2)),
        )
        eta = linear_predictor(np.zeros(2), np.zeros(2), data)
        np.testing.assert_array_equal(eta, np.zeros(3))

    def test_identity_designs(self):
        data = ModelData(
            y=np.zeros(2), X=np.eye(2), Z=np.eye(2), coords=np.zeros((2, 2))
        )
        eta = linear_predictor(np.array([1.0, 2.0]), np.array([0.5, -0.5]), data)
        np.testing.assert_allclose(eta, [1.5, 1.5])

    def test_matches_naive_triple_loop(self):
        rng = np.random.default_rng(11)
        X = rng.normal(size=(5, 2))
        Z = rng.normal(size=(5, 3))
        beta = rng.normal(size=2)
        u = rng.normal(size=3)
        data = ModelData(y=np.zeros(5), X=X, Z=Z, coords=np.zeros((3, 2)))
        expected = np.zeros(5)
        for i in range(5):
            for j in range(2):
                expected[i] += X[i, j] * beta[j]
            for j in range(3):
                expected[i] += Z[i, j] * u[j]
        np.testing.assert_allclose(
            linear_predictor(beta, u, data), expected, atol=1e-12
        )

    def test_dimension_mismatch(self):
        data = ModelData(
            y=np.zeros(3), X=np.ones((3, 2)), Z=np.ones((3, 2)), coords=np.zeros((2, 2))
        )
        with pytest.raises(ValueError):
            linear_predictor(np.zeros(3), np.zeros(2), data)
        with pytest.raises(ValueError):
            linear_predictor(np.zeros(2), np.zeros(4), data)


class TestFamilyEval:
    def test_poisson_at_zero(self):
        fe = family_eval(Family.poisson(), np.zeros(1))
        assert fe.mu[0] == fe.dmu_deta[0] == fe.var_y[0] == 1.0

    def test_bernoulli_at_zero(self):
        fe = family_eval(Family.binomial(np.ones(1)), np.zeros(1))
        np.testing.assert_allclose([fe.mu[0], fe.dmu_deta[0], fe.var_y[0]], [0.5, 0.25, 0.25])

    def test_binomial_scalar_formulas(self):
        trials = 50.0
        eta = -1.0
        fe = family_eval(Family.binomial(np.array([trials])), np.array([eta]))
        p = 1.0 / (1.0 + math.exp(1.0))
        np.testing.assert_allclose(fe.mu[0], trials * p, rtol=1e-12)
        np.testing.assert_allclose(fe.var_y[0], trials * p * (1 - p), rtol=1e-12)

    @pytest.mark.parametrize("kind", ["poisson", "binomial"])
    def test_finite_and_positive_for_extreme_eta(self, kind):
        eta = np.array([-1e6, -35.0, 0.0, 35.0, 1e6])
        family = Family.poisson() if kind == "poisson" else Family.binomial(np.full(5, 3.0))
        fe = family_eval(family, eta)
        for arr in (fe.mu, fe.dmu_deta, fe.var_y):
            assert np.all(np.isfinite(arr))
        assert np.all(fe.var_y > 0)

    def test_family_validation(self):
        with pytest.raises(ValueError):
            Family("gamma")
        with pytest.raises(ValueError):
            Family.binomial(np.array([0.0, 1.0]))
        with pytest.raises(ValueError):
            Family("poisson", trials=np.ones(2))
        with pytest.raises(ValueError):
            Family("binomial")


class TestWorkingWeights:
    def test_poisson_at_zero(self):
        assert working_weights(Family.poisson(), np.zeros(1))[0] == 1.0

    def test_bernoulli_at_zero(self):
        w = working_weights(Family.binomial(np.ones(1)), np.zeros(1))
        np.testing.assert_allclose(w, [0.25])

    def test_poisson_equals_mean(self):
        eta = np.log(np.array([2.0, 3.0]))
        np.testing.assert_allclose(working_weights(Family.poisson(), eta), [2.0, 3.0], rtol=1e-12)

    def test_canonical_identity(self):
        rng = np.random.default_rng(5)
        eta = rng.normal(scale=3.0, size=50)
        for family in (Family.poisson(), Family.binomial(rng.integers(1, 30, 50).astype(float))):
            fe = family_eval(family, eta)
            np.testing.assert_allclose(working_weights(family, eta), fe.dmu_deta, rtol=1e-12)


class TestConditionalLogLik:
    def test_poisson_zero(self):
        value = conditional_log_lik(Family.poisson(), np.array([0.0]), np.array([0.0]))
        assert value == pytest.approx(-1.0, abs=1e-14)

    def test_bernoulli_half(self):
        value = conditional_log_lik(Family.binomial(np.ones(1)), np.array([1.0]), np.array([0.0]))
        assert value == pytest.approx(math.log(0.5), abs=1e-14)

    def test_poisson_scalar_formula(self):
        value = conditional_log_lik(Family.poisson(), np.array([3.0]), np.array([1.0]))
        expected = 3.0 * 1.0 - math.exp(1.0) - math.log(math.factorial(3))
        assert value == pytest.approx(expected, abs=1e-12)

    def test_invalid_response(self):
        family = Family.binomial(np.full(2, 4.0))
        with pytest.raises(ValueError, match="row 1"):
            conditional_log_lik(family, np.array([2.0, 5.0]), np.zeros(2))
        with pytest.raises(ValueError):
            conditional_log_lik(Family.poisson(), np.array([-1.0]), np.zeros(1))

    def test_matrix_eta_matches_columnwise(self):
        rng = np.random.default_rng(2)
        family = Family.binomial(rng.integers(1, 9, 6).astype(float))
        y = np.minimum(rng.integers(0, 9, 6), family.trials).astype(float)
        etas = rng.normal(size=(6, 4))
        batch = conditional_log_lik(family, y, etas)
        single = [conditional_log_lik(family, y, etas[:, k]) for k in range(4)]
        np.testing.assert_allclose(batch, single, rtol=1e-13)

    def test_gradient_matches_score(self):
        rng = np.random.default_rng(7)
        h = 1e-5
        for family, y in [
            (Family.poisson(), rng.poisson(3.0, 8).astype(float)),
            (Family.binomial(np.full(8, 10.0)), rng.integers(0, 11, 8).astype(float)),
        ]:
            eta = rng.normal(size=8)
            grad = np.empty(8)
            for i in range(8):
                up, dn = eta.copy(), eta.copy()
                up[i] += h
                dn[i] -= h
                grad[i] = (
                    conditional_log_lik(family, y, up) - conditional_log_lik(family, y, dn)
                ) / (2 * h)
            np.testing.assert_allclose(grad, glm_score(family, y, eta), rtol=1e-6, atol=1e-8)


class TestGlmFit:
    def test_poisson_intercept_closed_form(self):
        y = np.array([1.0, 2.0, 3.0, 6.0])
        data = ModelData(y=y, X=np.ones((4, 1)), Z=np.zeros((4, 1)), coords=np.zeros((1, 2)))
        beta = glm_fit(data, Family.poisson())
        assert beta[0] == pytest.approx(math.log(y.mean()), abs=1e-10)

    def test_bernoulli_intercept_zero(self):
        y = np.array([0.0, 1.0, 0.0, 1.0])
        data = ModelData(y=y, X=np.ones((4, 1)), Z=np.zeros((4, 1)), coords=np.zeros((1, 2)))
        beta = glm_fit(data, Family.binomial(np.ones(4)))
        assert beta[0] == pytest.approx(0.0, abs=1e-10)

    def test_matches_derivative_free_optimizer(self):
        rng = np.random.default_rng(21)
        n = 40
        X = np.column_stack((np.ones(n), rng.normal(size=n)))
        eta = X @ np.array([0.7, 0.3])
        y = rng.poisson(np.exp(eta)).astype(float)
        data = ModelData(y=y, X=X, Z=np.zeros((n, 1)), coords=np.zeros((1, 2)))
        family = Family.poisson()
        beta = glm_fit(data, family)

        res = minimize(
            lambda b: -conditional_log_lik(family, y, X @ b),
            np.zeros(2),
            method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 5000},
        )
        np.testing.assert_allclose(beta, res.x, atol=1e-6)

    def test_score_at_optimum(self):
        data, family, _, _ = poisson_instance(seed=3, n=30, q=3)
        beta = glm_fit(data, family)
        mu = family_eval(family, data.X @ beta).mu
        assert np.max(np.abs(data.X.T @ (data.y - mu))) < 1e-6 * data.n_obs


class TestCheckModelData:
    def test_rejects_rank_deficient_X(self):
        X = np.column_stack((np.ones(5), np.ones(5)))
        with pytest.raises(ValueError, match="rank"):
            check_model_data(np.zeros(5), X, np.eye(5), np.zeros((5, 2)), Family.poisson())

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError, match="rows"):
            check_model_data(
                np.zeros(4), np.ones((3, 1)), np.eye(4), np.zeros((4, 2)), Family.poisson()
            )

    def test_rejects_y_above_trials(self):
        family = Family.binomial(np.full(3, 2.0))
        with pytest.raises(ValueError, match="row 2"):
            check_model_data(
                np.array([0.0, 1.0, 3.0]),
                np.ones((3, 1)),
                np.eye(3),
                np.zeros((3, 2)),
                family,
            )
