"""Kalman and derivative recursions against independent oracles.

kalman_step is checked against scipy's multivariate normal density and a
brute-force dense update on the observed submodel; derivative_step is
checked as a directional derivative via central finite differences of two
perturbed kalman_step runs.
"""

import numpy as np
import pytest
from scipy import stats

from sdcov import statespace as ss
from sdcov.errors import NonInvertibleF


def random_spd(rng, n, scale=1.0):
    A = rng.standard_normal((n, n))
    return scale * (A @ A.T / n + 0.1 * np.eye(n))


def random_model(rng, n):
    a = rng.standard_normal(n)
    P = random_spd(rng, n)
    H = np.diag(rng.uniform(0.1, 1.0, n))
    Q = random_spd(rng, n, 0.5)
    y = rng.standard_normal(n) + a
    return y, a, P, H, Q


class TestSelectionAndCommutation:
    def test_selection_picks_observed_entries(self):
        mask = np.array([True, False, True, True, False])
        G = ss.selection_matrix(mask)
        assert G.shape == (3, 5)
        y = np.arange(5.0)
        np.testing.assert_array_equal(G @ y, [0.0, 2.0, 3.0])
        np.testing.assert_array_equal(G @ G.T, np.eye(3))

    def test_commutation_transposes_vec(self):
        rng = np.random.default_rng(5)
        for m, n in [(2, 3), (4, 4), (5, 2), (1, 6)]:
            A = rng.standard_normal((m, n))
            C = ss.commutation_matrix(m, n)
            np.testing.assert_array_equal(C @ A.ravel(order="F"),
                                          A.T.ravel(order="F"))
            # permutation matrix: orthogonal with unit row sums
            np.testing.assert_array_equal(C @ C.T, np.eye(m * n))


class TestKalmanStep:
    def test_full_observation_matches_textbook_update(self):
        rng = np.random.default_rng(17)
        for _ in range(10):
            n = rng.integers(2, 6)
            y, a, P, H, Q = random_model(rng, n)
            step = ss.kalman_step(y, np.ones(n, dtype=bool), a, P, H, Q)
            F = P + H
            F_inv = np.linalg.inv(F)
            K = P @ F_inv
            np.testing.assert_allclose(step.v, y - a, rtol=1e-12)
            np.testing.assert_allclose(step.F, F, rtol=1e-12)
            np.testing.assert_allclose(step.K, K, rtol=1e-10)
            np.testing.assert_allclose(step.a_next, a + K @ (y - a), rtol=1e-10)
            np.testing.assert_allclose(step.P_next, P - P @ F_inv @ P + Q,
                                       rtol=1e-9, atol=1e-12)

    def test_loglik_matches_scipy_density(self):
        rng = np.random.default_rng(19)
        for _ in range(10):
            n = int(rng.integers(2, 7))
            y, a, P, H, Q = random_model(rng, n)
            mask = rng.uniform(size=n) < 0.7
            if not mask.any():
                mask[0] = True
            step = ss.kalman_step(y, mask, a, P, H, Q)
            ref = stats.multivariate_normal.logpdf(y[mask], mean=a[mask],
                                                   cov=(P + H)[np.ix_(mask, mask)])
            assert step.loglik == pytest.approx(ref, rel=1e-10)

    def test_masked_step_equals_observed_submodel(self):
        # dropping rows/cols of everything then running fully observed must agree
        rng = np.random.default_rng(23)
        n = 6
        y, a, P, H, Q = random_model(rng, n)
        mask = np.array([True, False, True, True, False, True])
        idx = np.flatnonzero(mask)
        step = ss.kalman_step(y, mask, a, P, H, Q)
        sub = ss.kalman_step(y[idx], np.ones(idx.size, bool), a[idx],
                             P[np.ix_(idx, idx)], H[np.ix_(idx, idx)],
                             Q[np.ix_(idx, idx)])
        np.testing.assert_allclose(step.v, sub.v, rtol=1e-12)
        np.testing.assert_allclose(step.F, sub.F, rtol=1e-12)
        assert step.loglik == pytest.approx(sub.loglik, rel=1e-12)
        np.testing.assert_allclose(step.a_next[idx], sub.a_next, rtol=1e-10)

    def test_symmetry_of_p_next(self):
        rng = np.random.default_rng(29)
        y, a, P, H, Q = random_model(rng, 5)
        step = ss.kalman_step(y, np.ones(5, bool), a, P, H, Q)
        np.testing.assert_array_equal(step.P_next, step.P_next.T)

    def test_all_missing_prediction(self):
        rng = np.random.default_rng(31)
        _, a, P, _, Q = random_model(rng, 4)
        a2, P2 = ss.kalman_step_all_missing(a, P, Q)
        np.testing.assert_array_equal(a2, a)
        np.testing.assert_allclose(P2, P + Q, rtol=1e-14)

    def test_singular_innovation_raises(self):
        n = 3
        a = np.zeros(n)
        with pytest.raises(NonInvertibleF):
            ss.kalman_step(np.ones(n), np.ones(n, bool), a,
                           np.zeros((n, n)), np.zeros((n, n)), np.eye(n))

    def test_condition_cap_raises(self):
        P = np.diag([1.0, 1e-13])
        with pytest.raises(NonInvertibleF):
            ss.kalman_step(np.ones(2), np.ones(2, bool), np.zeros(2),
                           P, np.zeros((2, 2)), np.eye(2))


class TestDerivativeStep:
    """Directional-derivative oracle: perturb all inputs of kalman_step along
    one parameter direction and difference the outputs."""

    @staticmethod
    def perturbed_outputs(y, mask, a, P, H, Q, da, dP, dH, dQ, eps):
        step = ss.kalman_step(y, mask, a + eps * da, P + eps * dP,
                              H + eps * dH, Q + eps * dQ)
        return step.v, step.F, step.K, step.a_next, step.P_next

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(41)
        for trial in range(8):
            n = int(rng.integers(2, 5))
            k = int(rng.integers(1, 4))
            y, a, P, H, Q = random_model(rng, n)
            mask = rng.uniform(size=n) < 0.75
            if not mask.any():
                mask[0] = True
            n_t = int(mask.sum())

            a_dot = rng.standard_normal((n, k))
            dPs = [random_spd(rng, n, 0.3) - random_spd(rng, n, 0.3) for _ in range(k)]
            dHs = [np.diag(rng.uniform(-0.5, 0.5, n)) for _ in range(k)]
            dQs = [random_spd(rng, n, 0.2) - random_spd(rng, n, 0.2) for _ in range(k)]
            P_dot = np.column_stack([M.ravel(order="F") for M in dPs])
            H_dot = np.column_stack([M.ravel(order="F") for M in dHs])
            Q_dot = np.column_stack([M.ravel(order="F") for M in dQs])

            step = ss.kalman_step(y, mask, a, P, H, Q)
            der = ss.derivative_step(step, mask, P, a_dot, P_dot, H_dot, Q_dot)

            eps = 1e-6
            for j in range(k):
                up = self.perturbed_outputs(y, mask, a, P, H, Q, a_dot[:, j],
                                            dPs[j], dHs[j], dQs[j], eps)
                dn = self.perturbed_outputs(y, mask, a, P, H, Q, a_dot[:, j],
                                            dPs[j], dHs[j], dQs[j], -eps)
                fd_v, fd_F, fd_K, fd_a, fd_P = [(u - d) / (2 * eps)
                                                for u, d in zip(up, dn)]
                np.testing.assert_allclose(der.v_dot[:, j], fd_v, atol=1e-7)
                np.testing.assert_allclose(
                    der.F_dot[:, j].reshape(n_t, n_t, order="F"), fd_F, atol=1e-6)
                np.testing.assert_allclose(
                    der.K_dot[:, j].reshape(n, n_t, order="F"), fd_K,
                    rtol=1e-4, atol=1e-6)
                np.testing.assert_allclose(der.a_dot_next[:, j], fd_a,
                                           rtol=1e-4, atol=1e-6)
                np.testing.assert_allclose(
                    der.P_dot_next[:, j].reshape(n, n, order="F"), fd_P,
                    rtol=1e-4, atol=1e-6)

    def test_all_missing_counterpart(self):
        rng = np.random.default_rng(43)
        n, k = 3, 2
        a_dot = rng.standard_normal((n, k))
        P_dot = rng.standard_normal((n * n, k))
        Q_dot = rng.standard_normal((n * n, k))
        a2, P2 = ss.derivative_step_all_missing(a_dot, P_dot, Q_dot)
        np.testing.assert_array_equal(a2, a_dot)
        np.testing.assert_array_equal(P2, P_dot + Q_dot)
