"""Matern kernel, covariance bundle and Gaussian log-density."""

import math

import numpy as np
import pytest

from mcglmm import CovarianceParams, build_bundle, gaussian_logdensity, matern1
from mcglmm.covariance import gaussian_logdensity_rows


class TestMatern1:
    def test_zero_distance(self):
        assert matern1(0.0, 2.5, 0.3) == pytest.approx(2.5, rel=1e-14)

    def test_scalar_values(self):
        assert matern1(0.1, 1.0, 0.1) == pytest.approx(2.0 * math.exp(-1.0), abs=1e-12)
        assert matern1(0.3, 2.0, 0.15) == pytest.approx(6.0 * math.exp(-2.0), abs=1e-12)

    def test_monotone_decreasing_and_positive(self):
        d = np.linspace(0.0, 10.0, 400)
        k = matern1(d, 1.3, 0.4)
        assert np.all(k > 0)
        assert np.all(np.diff(k) <= 0)


class TestBuildBundle:
    def test_single_point(self):
        params = CovarianceParams.from_raw(2.0, 0.5)
        bundle = build_bundle(np.array([[0.3, 0.7]]), params)
        np.testing.assert_allclose(bundle.D, [[2.0]], rtol=1e-14)
        np.testing.assert_allclose(bundle.L, [[math.sqrt(2.0)]], rtol=1e-14)
        assert bundle.logdet_D == pytest.approx(math.log(2.0), abs=1e-14)

    def test_coincident_points_engage_jitter(self):
        coords = np.array([[0.1, 0.1], [0.1, 0.1]])
        with pytest.warns(UserWarning, match="duplicated"):
            bundle = build_bundle(coords, CovarianceParams.from_raw(1.0, 0.2))
        assert bundle.jitter_used > 0.0
        assert math.isfinite(bundle.logdet_D)
        np.testing.assert_allclose(
            bundle.D, np.ones((2, 2)) + bundle.jitter_used * np.eye(2), rtol=1e-12
        )

    def test_cholesky_reconstructs_D(self):
        rng = np.random.default_rng(8)
        bundle = build_bundle(rng.uniform(size=(6, 2)), CovarianceParams.from_raw(1.5, 0.25))
        err = np.max(np.abs(bundle.L @ bundle.L.T - bundle.D))
        assert err <= 1e-10 * np.max(np.abs(bundle.D))
        assert bundle.logdet_D == pytest.approx(
            2.0 * np.sum(np.log(np.diag(bundle.L))), rel=1e-12
        )

    def test_derivatives_match_finite_differences(self):
        rng = np.random.default_rng(3)
        coords = rng.uniform(size=(5, 2))
        params = CovarianceParams.from_raw(0.9, 0.35)
        bundle = build_bundle(coords, params)
        h = 1e-6
        for i, name in enumerate(("log_tau2", "log_lambda")):
            up = CovarianceParams(
                params.log_tau2 + (h if i == 0 else 0.0),
                params.log_lambda + (h if i == 1 else 0.0),
            )
            dn = CovarianceParams(
                params.log_tau2 - (h if i == 0 else 0.0),
                params.log_lambda - (h if i == 1 else 0.0),
            )
            fd = (build_bundle(coords, up).D - build_bundle(coords, dn).D) / (2 * h)
            np.testing.assert_allclose(bundle.dD[i], fd, rtol=1e-6, atol=1e-9)

    def test_dD_tau2_is_D_exactly(self):
        rng = np.random.default_rng(9)
        bundle = build_bundle(rng.uniform(size=(4, 2)), CovarianceParams.from_raw(1.1, 0.3))
        assert bundle.jitter_used == 0.0
        np.testing.assert_array_equal(bundle.dD[0], bundle.D)

    def test_rigid_motion_invariance(self):
        rng = np.random.default_rng(14)
        coords = rng.uniform(size=(7, 2))
        angle = 1.234
        rot = np.array(
            [[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]]
        )
        moved = coords @ rot.T + np.array([3.0, -1.5])
        params = CovarianceParams.from_raw(1.0, 0.2)
        a = build_bundle(coords, params)
        b = build_bundle(moved, params)
        np.testing.assert_allclose(a.D, b.D, rtol=1e-10, atol=1e-12)


class TestGaussianLogDensity:
    @staticmethod
    def _identity_bundle(q):
        params = CovarianceParams.from_raw(1.0, 1.0)
        coords = 100.0 * np.arange(q, dtype=float)[:, None]
        return build_bundle(np.column_stack((coords, np.zeros(q))), params)

    def test_standard_normal_scalar(self):
        bundle = self._identity_bundle(1)
        value = gaussian_logdensity(np.zeros(1), bundle)
        assert value == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)

    def test_two_dimensional(self):
        bundle = self._identity_bundle(2)
        value = gaussian_logdensity(np.ones(2), bundle)
        assert value == pytest.approx(-math.log(2 * math.pi) - 1.0, abs=1e-10)

    def test_matches_dense_inverse_oracle(self):
        rng = np.random.default_rng(17)
        coords = rng.uniform(size=(4, 2))
        bundle = build_bundle(coords, CovarianceParams.from_raw(1.4, 0.45))
        u = rng.normal(size=4)
        q = 4
        expected = (
            -0.5 * q * math.log(2 * math.pi)
            - 0.5 * math.log(np.linalg.det(bundle.D))
            - 0.5 * u @ np.linalg.inv(bundle.D) @ u
        )
        assert gaussian_logdensity(u, bundle) == pytest.approx(expected, abs=1e-10)

    def test_self_consistency_from_factor(self):
        rng = np.random.default_rng(23)
        coords = rng.uniform(size=(5, 2))
        bundle = build_bundle(coords, CovarianceParams.from_raw(0.7, 0.3))
        u = rng.normal(size=5)
        rebuilt = bundle.L @ bundle.L.T
        expected = (
            -0.5 * 5 * math.log(2 * math.pi)
            - 0.5 * np.log(np.linalg.det(rebuilt))
            - 0.5 * u @ np.linalg.solve(rebuilt, u)
        )
        assert gaussian_logdensity(u, bundle) == pytest.approx(expected, abs=1e-10)

    def test_row_batch_matches_scalar(self):
        rng = np.random.default_rng(29)
        coords = rng.uniform(size=(3, 2))
        bundle = build_bundle(coords, CovarianceParams.from_raw(1.0, 0.5))
        U = rng.normal(size=(6, 3))
        batch = gaussian_logdensity_rows(U, bundle)
        singles = [gaussian_logdensity(u, bundle) for u in U]
        np.testing.assert_allclose(batch, singles, rtol=1e-13)
