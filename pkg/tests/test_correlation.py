"""Correlation parameterizations: structure, inverses and Jacobian oracles.

The Jacobians are checked against central finite differences computed from
the forward maps alone, and dR is additionally cross-checked against the
Kronecker/commutation identity, so the analytic formulas never certify
themselves.
"""

import numpy as np
import pytest

from sdcov import correlation as corr
from sdcov.statespace import commutation_matrix


def fd_columns(fun, x, h=1e-6):
    """Central finite differences of a vector-valued fun, one column per x_i."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((fun(x + e) - fun(x - e)) / (2.0 * h))
    return np.column_stack(cols)


def random_angles(rng, n):
    # interior angles, away from the clamp boundaries
    return rng.uniform(0.3, np.pi - 0.3, size=corr.n_angles(n))


class TestHypersphericalStructure:
    def test_identity_at_right_angles(self):
        for n in (2, 3, 5):
            theta = np.full(corr.n_angles(n), np.pi / 2)
            np.testing.assert_allclose(corr.corr_from_angles(theta, n), np.eye(n),
                                       atol=1e-14)

    def test_bivariate_cosine(self):
        R = corr.corr_from_angles(np.array([np.pi / 3]), 2)
        assert R[0, 1] == pytest.approx(0.5, abs=1e-14)

    def test_factor_is_upper_triangular_with_unit_columns(self):
        rng = np.random.default_rng(7)
        for n in (2, 4, 7):
            Z = corr.hyperspherical_cholesky(random_angles(rng, n), n)
            assert np.allclose(Z, np.triu(Z))
            np.testing.assert_allclose((Z ** 2).sum(axis=0), np.ones(n), atol=1e-12)

    def test_positive_definite_unit_diagonal(self):
        rng = np.random.default_rng(11)
        for n in (2, 3, 6, 10):
            for _ in range(20):
                R = corr.corr_from_angles(random_angles(rng, n), n)
                np.testing.assert_allclose(np.diag(R), np.ones(n), atol=0)
                assert np.abs(R).max() <= 1.0 + 1e-12
                assert np.linalg.eigvalsh(R)[0] > 0

    def test_clamping_matches_clamped_input(self):
        theta = np.array([-1.0, 4.0, 0.5])
        clamped = corr.clamp_angles(theta)
        np.testing.assert_array_equal(corr.corr_from_angles(theta, 3),
                                      corr.corr_from_angles(clamped, 3))

    def test_roundtrip_through_angles(self):
        rng = np.random.default_rng(3)
        for n in (2, 3, 5, 9):
            theta = random_angles(rng, n)
            R = corr.corr_from_angles(theta, n)
            np.testing.assert_allclose(corr.angles_from_corr(R), theta, rtol=1e-9)


class TestHypersphericalJacobians:
    def test_dZ_matches_finite_differences(self):
        rng = np.random.default_rng(23)
        for n in (2, 3, 5, 8):
            theta = random_angles(rng, n)
            fd = fd_columns(lambda th: corr.hyperspherical_cholesky(th, n).ravel(order="F"),
                            theta)
            np.testing.assert_allclose(corr.dZ_dtheta(theta, n), fd,
                                       rtol=2e-6, atol=1e-9)

    def test_dR_matches_finite_differences(self):
        rng = np.random.default_rng(29)
        for n in (2, 3, 5, 8):
            theta = random_angles(rng, n)
            fd = fd_columns(lambda th: corr.corr_from_angles(th, n).ravel(order="F"),
                            theta)
            np.testing.assert_allclose(corr.dR_hyperspherical(theta, n), fd,
                                       rtol=2e-6, atol=1e-8)

    def test_dR_matches_kronecker_identity(self):
        # dR = [(Z' kron I) C_nn + (I kron Z')] dZ, an independent assembly route
        rng = np.random.default_rng(31)
        for n in (2, 3, 5):
            theta = random_angles(rng, n)
            Z = corr.hyperspherical_cholesky(theta, n)
            dZ = corr.dZ_dtheta(theta, n)
            C = commutation_matrix(n, n)
            eye = np.eye(n)
            expected = (np.kron(Z.T, eye) @ C + np.kron(eye, Z.T)) @ dZ
            np.testing.assert_allclose(corr.dR_hyperspherical(theta, n), expected,
                                       rtol=1e-12, atol=1e-12)

    def test_third_case_uses_differentiated_angle(self):
        # For l < i the correct factor is cot(theta_lj), not cot(theta_ij).
        n = 3
        theta = np.array([0.7, 1.1, 0.9])  # pairs (0,1), (0,2), (1,2)
        Z = corr.hyperspherical_cholesky(theta, n)
        dZ = corr.dZ_dtheta(theta, n)
        # angle (0,2) is index 1; entry Z[1,2] has l=0 < i=1, j=2
        d_entry = dZ[:, 1].reshape(n, n, order="F")[1, 2]
        assert d_entry == pytest.approx(Z[1, 2] / np.tan(theta[1]), rel=1e-12)
        assert d_entry != pytest.approx(Z[1, 2] / np.tan(theta[2]), rel=1e-3)


class TestEquicorrelation:
    def test_rho_spans_open_pd_interval(self):
        n = 5
        assert corr.equicorr_rho(-30.0, n) == pytest.approx(-1.0 / (n - 1), abs=1e-9)
        assert corr.equicorr_rho(30.0, n) == pytest.approx(1.0, abs=1e-9)
        for theta in (-25.0, -2.0, 0.0, 2.0, 25.0):
            R = corr.equicorr_matrix(theta, n)
            assert np.linalg.eigvalsh(R)[0] > 0

    def test_rho_derivative_matches_finite_differences(self):
        n = 4
        for theta in (-1.5, -0.2, 0.0, 0.8, 2.0):
            h = 1e-6
            fd = (corr.equicorr_rho(theta + h, n) - corr.equicorr_rho(theta - h, n)) / (2 * h)
            rho_dot, dR = corr.equicorr_derivative(theta, n)
            assert rho_dot == pytest.approx(fd, rel=1e-8)
            dRm = dR[:, 0].reshape(n, n, order="F")
            assert np.all(np.diag(dRm) == 0)
            off = dRm[~np.eye(n, dtype=bool)]
            np.testing.assert_allclose(off, rho_dot, rtol=1e-14)

    def test_theta_roundtrip(self):
        n = 6
        for rho in (-0.15, 0.0, 0.3, 0.9):
            theta = corr.equicorr_theta_from_rho(rho, n)
            assert corr.equicorr_rho(theta, n) == pytest.approx(rho, abs=1e-12)

    def test_rejects_univariate(self):
        with pytest.raises(ValueError):
            corr.equicorr_rho(0.0, 1)
