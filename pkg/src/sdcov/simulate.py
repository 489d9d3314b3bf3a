"""Data-generating processes for the simulation studies.

Covers the score-driven local-level DGP, random censoring, the five
bivariate correlation patterns with measurement noise, the Student-t
score-driven (t-GAS) return DGP and additive fat-tailed noise
contamination. Every simulator is deterministic given its seed, and
innovation, mask and pattern draws come from independent substreams so
that changing the missing probability never alters the price draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import scoredriver as sd
from . import statespace as ss
from ._backend import HAVE_KERNELS, _PARAM_TAG, _kernels, default_backend
from .errors import DivergedFilter, NonInvertibleF, ParameterOverflow, UnknownPattern
from .panel import ObservationPanel

PATTERNS = ("sine", "fast_sine", "step", "ramp", "model")

BIVARIATE_D2 = 0.1  # latent return variance of the bivariate pattern DGP


@dataclass
class ScenarioConfig:
    """One cell of a simulation study grid.

    lam is the probability that any single price observation is removed;
    delta is the signal-to-noise ratio d^2 / h of the bivariate DGP.
    """

    n: int
    T: int
    N_reps: int
    lam: float
    delta: float
    pattern: str
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.lam < 1.0:
            raise ValueError("lam must lie in [0, 1)")
        if self.delta <= 0.0:
            raise ValueError("delta must be positive")


@dataclass
class SimulatedPath:
    """A fully observed panel together with the truth that generated it."""

    panel: ObservationPanel
    x: np.ndarray        # (T, n) efficient log-prices
    f_path: np.ndarray   # (T, k) true time-varying parameter path
    theta: sd.StaticParams
    loglik: float        # model log-likelihood of the panel at theta

    def true_paths(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Expand f_path into (H diagonal, D diagonal, R) paths."""
        return sd.snapshots_from_path(self.f_path, self.panel.n,
                                      self.theta.parameterization)


@dataclass
class BivariatePath:
    """Bivariate pattern DGP output: censored panel plus the true path."""

    panel: ObservationPanel
    x: np.ndarray     # (T, 2) latent log-prices
    rho: np.ndarray   # (T,) true correlation path
    h: float          # measurement noise variance
    d2: float         # latent return variance


@dataclass
class TGasPath:
    """Student-t DGP output: returns, cumulated prices and the truth."""

    returns: np.ndarray      # (T, n)
    prices: np.ndarray       # (T + 1, n) log-prices, prices[0] = 0
    f_path: np.ndarray       # (T, k) with k = n + q
    nu: float
    parameterization: str

    @property
    def sigma_path(self) -> np.ndarray:
        """(T, n, n) true conditional covariances D_t R_t D_t."""
        T, n = self.returns.shape
        fake = np.zeros((T, n + self.f_path.shape[1]))
        fake[:, n:] = self.f_path
        _, d, R = sd.snapshots_from_path(fake, n, self.parameterization)
        return d[:, :, None] * R * d[:, None, :]


def baseline_dgp_params(n: int, parameterization: str = sd.PARAM_HYPER
                        ) -> sd.StaticParams:
    """Mean-reverting DGP coefficients used throughout the studies.

    The intercepts are calibrated so that the unconditional ratio of the
    efficient-return variance to the measurement-noise variance matches the
    level found on empirical data (about one at the return level).
    """
    return sd.StaticParams.restriction_i(
        n, parameterization, -0.0461, -0.0322, 0.0185,
        0.02, 0.02, 0.02, 0.98, 0.98, 0.98)


def random_walk_dgp_params(n: int, parameterization: str = sd.PARAM_HYPER,
                           a: float = 0.02) -> sd.StaticParams:
    """Random-walk DGP coefficients: omega = 0, B = I, block-constant A."""
    return sd.StaticParams.restriction_ii(n, parameterization, a, a, a)


def portfolio_dgp_params(n: int, parameterization: str = sd.PARAM_HYPER
                         ) -> sd.StaticParams:
    """Mean-reverting coefficients at intraday scale for backtest studies.

    Unconditional per-second variances are about 9e-9 (roughly a 1.5%
    daily volatility) with a unit signal-to-noise ratio.
    """
    return sd.StaticParams.restriction_i(
        n, parameterization, -0.370, -0.370, 0.0185,
        0.02, 0.02, 0.02, 0.98, 0.98, 0.98)


def tgas_dgp_params(n: int, parameterization: str = sd.PARAM_HYPER
                    ) -> sd.StaticParams:
    """Coefficients of the Student-t return DGP over the n + q blocks.

    Same block values as the mean-reverting baseline, without a noise block
    since the returns are observed directly.
    """
    q = sd.n_corr_params(n, parameterization)
    omega = np.concatenate([np.full(n, -0.0322), np.full(q, 0.0185)])
    return sd.StaticParams(n, parameterization, omega,
                           np.full(n + q, 0.02), np.full(n + q, 0.98), "I")


# ---------------------------------------------------------------------------
# score-driven local-level DGP
# ---------------------------------------------------------------------------

def _simulate_scoredriven_python(theta: sd.StaticParams, f1: np.ndarray,
                                 x1: np.ndarray, xi: np.ndarray,
                                 zeta: np.ndarray):
    """NumPy twin of the compiled simulator; consumes pre-drawn shocks."""
    T, n = xi.shape
    k = theta.k
    param = theta.parameterization
    f = np.asarray(f1, dtype=float).copy()
    x = np.asarray(x1, dtype=float).copy()
    a = x.copy()
    P = np.zeros((n, n))
    a_dot = np.zeros((n, k))
    P_dot = np.zeros((n * n, k))
    full = np.ones(n, dtype=bool)

    y_out = np.empty((T, n))
    x_out = np.empty((T, n))
    f_path = np.empty((T, k))
    loglik = 0.0
    for t in range(T):
        f_path[t] = f
        snap, H_dot, Q_dot = sd.assemble(f, n, param)
        x_out[t] = x
        y = x + np.sqrt(snap.h) * xi[t]
        y_out[t] = y
        try:
            step = ss.kalman_step(y, full, a, P, snap.H, snap.Q)
        except NonInvertibleF as exc:
            raise NonInvertibleF(t=t, cond=exc.cond) from None
        der = ss.derivative_step(step, full, P, a_dot, P_dot, H_dot, Q_dot)
        J = sd.link_jacobian(f, n, param)
        nabla, fisher = sd.score_fisher(step.v, step.F_inv, der.v_dot,
                                        der.F_dot, J)
        s = sd.scaled_score(nabla, fisher)
        loglik += step.loglik
        a, P = step.a_next, step.P_next
        a_dot, P_dot = der.a_dot_next, der.P_dot_next
        x = x + snap.d * (_psd_factor(snap.R) @ zeta[t])
        try:
            f = sd.gas_update(theta, f, s)
        except ParameterOverflow:
            raise DivergedFilter(t=t) from None
    return y_out, x_out, f_path, float(loglik)


def _psd_factor(R: np.ndarray) -> np.ndarray:
    """Factor M with M M' = R for any symmetric PSD R.

    The recursion can visit numerically semidefinite correlation states
    where a Cholesky factor does not exist; the eigen-based factor still
    samples the (degenerate) normal correctly.
    """
    w, V = np.linalg.eigh(R)
    return V * np.sqrt(np.clip(w, 0.0, None))


def simulate_scoredriven(theta: sd.StaticParams, f1: np.ndarray, T: int,
                         n: int, seed, x1: np.ndarray | None = None,
                         backend: str | None = None) -> SimulatedPath:
    """Simulate a fully observed panel from the model's own recursion.

    At each step the measurement noise and state innovation are drawn from
    the covariances implied by the current f, the observation is filtered,
    and f advances by the GAS update computed from that observation.

    Parameters
    ----------
    theta : StaticParams
    f1 : initial time-varying parameter vector.
    T, n : panel shape; n must match theta.n.
    seed : int or numpy SeedSequence.
    x1 : initial efficient log-price vector, zeros when omitted.
    backend : "cython", "python" or None for the default.

    Raises
    ------
    DivergedFilter
        If a GAS update leaves the log-variance stability region.
    """
    if n != theta.n:
        raise ValueError("n does not match theta.n")
    k = theta.k
    f1 = np.ascontiguousarray(f1, dtype=float)
    if f1.shape != (k,):
        raise ValueError("f1 has the wrong length")
    if x1 is None:
        x1 = np.zeros(n)
    x1 = np.ascontiguousarray(x1, dtype=float)
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((T, n))
    zeta = rng.standard_normal((T, n))

    if backend is None:
        backend = default_backend()
    if backend == "cython" and HAVE_KERNELS:
        y = np.empty((T, n))
        x = np.empty((T, n))
        f_path = np.empty((T, k))
        status, loglik, t_fail = _kernels.ll_simulate(
            _PARAM_TAG[theta.parameterization], n,
            np.ascontiguousarray(theta.omega), np.ascontiguousarray(theta.A),
            np.ascontiguousarray(theta.B), f1, x1, xi, zeta, y, x, f_path)
        if status == 1:
            raise DivergedFilter(t=t_fail)
        if status == 2:
            raise NonInvertibleF(t=t_fail)
    else:
        y, x, f_path, loglik = _simulate_scoredriven_python(theta, f1, x1,
                                                            xi, zeta)
    panel = ObservationPanel.from_prices(y)
    return SimulatedPath(panel=panel, x=x, f_path=f_path, theta=theta,
                         loglik=float(loglik))


def censor(panel: ObservationPanel, lam: float, seed) -> ObservationPanel:
    """Mask each cell independently with probability lam.

    The mask is independent across series and time; lam = 0 returns an
    identical panel (same mask, fresh arrays).
    """
    if not 0.0 <= lam < 1.0:
        raise ValueError("lam must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    keep = rng.random(panel.prices.shape) >= lam
    mask = panel.mask & keep
    prices = np.where(mask, panel.prices, np.nan)
    return ObservationPanel(prices=prices, mask=mask,
                            symbols=list(panel.symbols),
                            times=panel.times.copy())


# ---------------------------------------------------------------------------
# bivariate correlation patterns
# ---------------------------------------------------------------------------

def _model_rho_path(T: int, rng: np.random.Generator) -> np.ndarray:
    """Logistic AR(1) correlation path started at its unconditional mean."""
    b, a = 0.99, 0.01
    c = -0.4 * (1.0 - b)
    h = np.empty(T)
    h[0] = c / (1.0 - b)
    shocks = rng.standard_normal(T - 1) if T > 1 else np.empty(0)
    for t in range(T - 1):
        h[t + 1] = c + b * h[t] + a * shocks[t]
    return 1.0 / (1.0 + np.exp(-h))


def rho_path(pattern: str, T: int, rng=None) -> np.ndarray:
    """True correlation path of one bivariate pattern, length T.

    The first four patterns are deterministic functions of t/T; "model" is
    a logistic AR(1) and consumes the supplied generator.

    Raises
    ------
    UnknownPattern
        If the pattern tag is not one of the five supported names.
    """
    t = np.arange(T, dtype=float)
    if pattern == "sine":
        return 0.4 * np.sin(4.0 * np.pi * t / T)
    if pattern == "fast_sine":
        return 0.4 * np.sin(8.0 * np.pi * t / T)
    if pattern == "step":
        return 0.25 - 0.5 * ((t < T / 4) | ((T / 2 < t) & (t < 3 * T / 4)))
    if pattern == "ramp":
        return np.mod(t + T / 4.0, T / 2.0) / T
    if pattern == "model":
        if rng is None:
            raise ValueError('the "model" pattern needs a generator')
        return _model_rho_path(T, np.random.default_rng(rng))
    raise UnknownPattern(pattern)


def pattern_rho(pattern: str, t: int, T: int, rng=None) -> float:
    """Value of the pattern at a single time; see rho_path."""
    if not 0 <= t < T:
        raise ValueError("t outside [0, T)")
    if pattern == "model":
        return float(rho_path(pattern, t + 1, rng)[-1])
    return float(rho_path(pattern, T, rng)[t])


def simulate_bivariate(pattern: str, delta: float, lam: float, T: int,
                       seed) -> BivariatePath:
    """Simulate the two-asset pattern DGP and censor it.

    The latent return variance is 0.1 per series, the noise variance is
    0.1 / delta, and the latent correlation follows the named pattern.
    Price, mask and pattern shocks come from independent substreams of the
    seed, so lam and delta changes never alter the latent draws.
    """
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    ss_root = np.random.SeedSequence(seed) if not isinstance(
        seed, np.random.SeedSequence) else seed
    innov_ss, mask_ss, pattern_ss = ss_root.spawn(3)
    rho = rho_path(pattern, T, pattern_ss if pattern == "model" else None)

    rng = np.random.default_rng(innov_ss)
    d = np.sqrt(BIVARIATE_D2)
    h = BIVARIATE_D2 / delta
    z = rng.standard_normal((T, 2))
    eps = np.sqrt(h) * rng.standard_normal((T, 2))
    # increments eta_t = d * chol(R_t) z_t drive x_{t+1} = x_t + eta_t
    c = np.sqrt(np.maximum(1.0 - rho ** 2, 0.0))
    inc = np.empty((T, 2))
    inc[:, 0] = d * z[:, 0]
    inc[:, 1] = d * (rho * z[:, 0] + c * z[:, 1])
    x = np.zeros((T, 2))
    x[1:] = np.cumsum(inc[:-1], axis=0)
    y = x + eps
    panel = censor(ObservationPanel.from_prices(y), lam, mask_ss)
    return BivariatePath(panel=panel, x=x, rho=rho, h=h, d2=BIVARIATE_D2)


# ---------------------------------------------------------------------------
# Student-t score-driven DGP and noise contamination
# ---------------------------------------------------------------------------

def simulate_tgas(theta, nu: float, T: int, n: int, seed,
                  f1: np.ndarray | None = None,
                  backend: str | None = None) -> TGasPath:
    """Simulate returns from the Student-t score-driven covariance model.

    theta carries the GAS coefficients over the k = n + q blocks
    [log d^2, correlation]; the draws use the (nu - 2)/nu scaling so that
    the covariance of r_t is exactly D_t R_t D_t. Returns are cumulated to
    log-prices starting from zero.
    """
    if nu <= 2.0:
        raise ValueError("nu must exceed 2")
    if n != theta.n:
        raise ValueError("n does not match theta.n")
    k = theta.omega.shape[0]
    if f1 is None:
        f1 = tgas_stationary_f(theta)
    f1 = np.ascontiguousarray(f1, dtype=float)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((T, n))
    psi = rng.chisquare(nu, T)

    if backend is None:
        backend = default_backend()
    f_path = np.empty((T, k))
    if backend == "cython" and HAVE_KERNELS:
        r = np.empty((T, n))
        status, _, t_fail = _kernels.tgas_simulate(
            _PARAM_TAG[theta.parameterization], nu,
            np.ascontiguousarray(theta.omega), np.ascontiguousarray(theta.A),
            np.ascontiguousarray(theta.B), f1, z, psi, r, f_path)
        if status == 1:
            raise DivergedFilter(t=t_fail)
        if status == 2:
            raise NonInvertibleF(t=t_fail)
    else:
        from .benchmarks import tgas_step_python  # lazy: score lives there
        r = np.empty((T, n))
        f = f1.copy()
        scale = np.sqrt((nu - 2.0) / psi)
        full = np.ones(n, dtype=bool)
        for t in range(T):
            f_path[t] = f
            snap = _tgas_snapshot(f, n, theta.parameterization)
            r[t] = snap.d * (_psd_factor(snap.R) @ z[t]) * scale[t]
            s, _ = tgas_step_python(r[t], full, f, n, theta.parameterization,
                                    nu)
            f = _tgas_gas_update(theta, f, s, t)
    prices = np.zeros((T + 1, n))
    prices[1:] = np.cumsum(r, axis=0)
    return TGasPath(returns=r, prices=prices, f_path=f_path, nu=nu,
                    parameterization=theta.parameterization)


def _tgas_snapshot(f: np.ndarray, n: int, parameterization: str):
    """Covariance snapshot for the k = n + q layout (no noise block)."""
    fake = np.concatenate([np.zeros(n), f])
    snap, _, _ = sd.assemble(fake, n, parameterization)
    return snap


def _tgas_gas_update(theta, f, s, t):
    f_next = theta.omega + theta.A * s + theta.B * f
    n = theta.n
    if not np.isfinite(f_next).all() or np.any(np.abs(f_next[:n]) > 50.0):
        raise DivergedFilter(t=t)
    return f_next


def tgas_stationary_f(theta) -> np.ndarray:
    """omega / (1 - B) blockwise; zeros where B has a unit root."""
    one_minus_b = 1.0 - np.asarray(theta.B, dtype=float)
    out = np.zeros_like(one_minus_b)
    ok = np.abs(one_minus_b) > 1e-12
    out[ok] = np.asarray(theta.omega)[ok] / one_minus_b[ok]
    return out


def contaminate_noise(prices: np.ndarray, delta: float, nu_err: float,
                      seed) -> np.ndarray:
    """Add i.i.d. Student-t measurement noise to a price panel.

    The noise variance is the average sample return variance divided by
    delta, so delta plays the role of a signal-to-noise ratio. nu_err must
    exceed 2 for the variance to exist.
    """
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    if nu_err <= 2.0:
        raise ValueError("nu_err must exceed 2")
    prices = np.asarray(prices, dtype=float)
    returns = np.diff(prices, axis=0)
    target_var = float(np.mean(returns ** 2)) / delta
    rng = np.random.default_rng(seed)
    draws = rng.standard_t(nu_err, prices.shape)
    noise = draws * np.sqrt(target_var * (nu_err - 2.0) / nu_err)
    return prices + noise
