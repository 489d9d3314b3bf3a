"""Compiled kernel against the NumPy engine.

Both backends implement the same recursion; they agree to floating-point
accuracy step by step. Over long horizons in configurations whose Fisher
matrix sits near the pseudo-inverse truncation threshold, last-bit
differences can be amplified by the cutoff decision, so the path
comparisons here use moderate horizons, plus one long equicorrelation run
whose Fisher is well conditioned throughout.
"""

import numpy as np
import pytest

import sdcov.simulate as sim
from sdcov import scoredriver as sd
from sdcov._backend import HAVE_KERNELS
from sdcov.errors import DivergedFilter, NonInvertibleF
from sdcov.estimation import FilterInit, filter_pass

pytestmark = pytest.mark.skipif(not HAVE_KERNELS,
                                 reason="compiled kernel not built")


def make_panel(n, T, lam, seed, parameterization=sd.PARAM_HYPER):
    theta = sim.baseline_dgp_params(n, parameterization)
    f1 = theta.stationary_f()
    path = sim.simulate_scoredriven(theta, f1, T, n, seed, backend="python")
    panel = sim.censor(path.panel, lam, seed + 1) if lam > 0 else path.panel
    init = FilterInit(f1=f1, a1=np.zeros(n), P1=np.eye(n) * 0.05)
    return panel, theta, init


def both_backends(panel, theta, init):
    py = filter_pass(panel, theta, init, backend="python")
    cy = filter_pass(panel, theta, init, backend="cython")
    return py, cy


class TestFilterParity:
    def test_bivariate_with_gaps(self):
        panel, theta, init = make_panel(2, 60, 0.3, seed=71)
        panel.mask[10:13] = False
        panel.prices[10:13] = np.nan
        py, cy = both_backends(panel, theta, init)
        assert cy.n_obs_steps == py.n_obs_steps
        assert abs(cy.loglik - py.loglik) <= 1e-9 * abs(py.loglik)
        np.testing.assert_allclose(cy.f_path, py.f_path, rtol=1e-7, atol=1e-9)
        np.testing.assert_allclose(cy.loglik_path, py.loglik_path,
                                   rtol=1e-7, atol=1e-9)

    def test_partial_masks_n4(self):
        panel, theta, init = make_panel(4, 80, 0.4, seed=72)
        py, cy = both_backends(panel, theta, init)
        assert cy.n_obs_steps == py.n_obs_steps
        assert abs(cy.loglik - py.loglik) <= 1e-8 * abs(py.loglik)
        np.testing.assert_allclose(cy.f_path, py.f_path, rtol=1e-6, atol=1e-8)

    def test_equicorrelation_long_run(self):
        panel, theta, init = make_panel(5, 300, 0.2, seed=73,
                                        parameterization=sd.PARAM_EQUI)
        py, cy = both_backends(panel, theta, init)
        assert cy.n_obs_steps == py.n_obs_steps
        assert abs(cy.loglik - py.loglik) <= 1e-10 * abs(py.loglik)
        np.testing.assert_allclose(cy.f_path, py.f_path, rtol=1e-9, atol=1e-11)

    def test_ten_series_fully_observed(self):
        panel, theta, init = make_panel(10, 60, 0.0, seed=74)
        py, cy = both_backends(panel, theta, init)
        assert cy.n_obs_steps == py.n_obs_steps == 60
        assert abs(cy.loglik - py.loglik) <= 1e-8 * abs(py.loglik)
        np.testing.assert_allclose(cy.f_path, py.f_path, rtol=1e-7, atol=1e-9)

    def test_env_override_selects_python(self, monkeypatch):
        from sdcov import _backend
        monkeypatch.setenv("SDCOV_BACKEND", "python")
        assert _backend.default_backend() == "python"
        monkeypatch.setenv("SDCOV_BACKEND", "cython")
        assert _backend.default_backend() == "cython"


class TestErrorParity:
    def test_divergence_reported_at_same_step(self):
        n, T = 2, 30
        k = sd.state_dim(n, sd.PARAM_HYPER)
        omega = np.zeros(k)
        # drift both noise variances together so F stays well conditioned
        # until the +/-50 log-variance cap trips
        omega[:n] = 5.0
        theta = sd.StaticParams(n, sd.PARAM_HYPER, omega, np.zeros(k),
                                np.ones(k), "I")
        panel, _, init = make_panel(n, T, 0.0, seed=75)
        t_seen = {}
        for backend in ("python", "cython"):
            with pytest.raises(DivergedFilter) as exc:
                filter_pass(panel, theta, init, backend=backend)
            t_seen[backend] = exc.value.t
        assert t_seen["python"] == t_seen["cython"] == 10

    def test_ill_conditioned_innovation_at_same_step(self):
        panel, theta, init = make_panel(2, 10, 0.0, seed=76)
        bad = FilterInit(f1=init.f1, a1=init.a1, P1=np.diag([1e14, 1.0]))
        for backend in ("python", "cython"):
            with pytest.raises(NonInvertibleF) as exc:
                filter_pass(panel, theta, init=bad, backend=backend)
            assert exc.value.t == 0


class TestSimulatorParity:
    def test_paths_match_python_twin(self):
        n, T = 3, 50
        theta = sim.baseline_dgp_params(n)
        f1 = theta.stationary_f()
        a = sim.simulate_scoredriven(theta, f1, T, n, 11, backend="cython")
        b = sim.simulate_scoredriven(theta, f1, T, n, 11, backend="python")
        np.testing.assert_allclose(a.panel.prices, b.panel.prices,
                                   rtol=1e-9, atol=1e-11)
        np.testing.assert_allclose(a.x, b.x, rtol=1e-9, atol=1e-11)
        np.testing.assert_allclose(a.f_path, b.f_path, rtol=1e-7, atol=1e-9)
        assert abs(a.loglik - b.loglik) <= 1e-9 * abs(b.loglik)

    def test_simulated_loglik_equals_filter_loglik(self):
        n, T = 3, 80
        theta = sim.baseline_dgp_params(n)
        f1 = theta.stationary_f()
        path = sim.simulate_scoredriven(theta, f1, T, n, 12, backend="cython")
        init = FilterInit(f1=f1, a1=np.zeros(n), P1=np.zeros((n, n)))
        for backend in ("python", "cython"):
            res = filter_pass(path.panel, theta, init, backend=backend)
            assert abs(res.loglik - path.loglik) <= 1e-9 * abs(path.loglik)
            np.testing.assert_allclose(res.f_path, path.f_path,
                                       rtol=1e-7, atol=1e-9)
