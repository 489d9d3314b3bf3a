"""Comparator models for the simulation and portfolio studies.

Previous-tick synchronization and subsampling turn an asynchronous panel
into a gap-free return grid; on that grid live the EWMA covariance filter
and the two-stage GARCH(1,1) + scalar DCC estimator. The Student-t
score-driven covariance filter (t-GAS) works on the raw grid instead and
handles missing values through the marginal density of the observed
subvector, but a return exists only when both endpoint prices are observed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize, special

from . import correlation as corr
from . import scoredriver as sd
from ._backend import HAVE_KERNELS, _PARAM_TAG, _kernels, default_backend
from .errors import (DegenerateReturns, DivergedFilter, EmptySeries,
                     NonInvertibleF, SingularCovariance)
from .panel import ObservationPanel

EWMA_GAMMA = 0.96
EWMA_INIT_WINDOW = 50
DCC_MIN_LENGTH = 200
DCC_MAX_ZERO_FRACTION = 0.95


# ---------------------------------------------------------------------------
# synchronization and subsampling
# ---------------------------------------------------------------------------

@dataclass
class SyncPanel:
    """Gap-free synchronized price grid and its returns.

    prices : (Tp, n) previous-tick filled log-prices.
    returns : (Tp - 1, n) first differences of the filled prices.
    zero : bool mask of exactly-zero returns (stale fills).
    m : sampling step relative to the original grid.
    """

    prices: np.ndarray
    returns: np.ndarray
    zero: np.ndarray
    m: int
    symbols: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.prices.shape[1]


def previous_tick_sync(panel: ObservationPanel) -> SyncPanel:
    """Fill each missing cell with the most recent observed price.

    Leading missing cells are backfilled with the series' first
    observation, so the synchronized grid has no gaps.

    Raises
    ------
    EmptySeries
        If a column has no observations at all.
    """
    T, n = panel.T, panel.n
    filled = np.empty((T, n))
    for j in range(n):
        obs = np.flatnonzero(panel.mask[:, j])
        if obs.size == 0:
            raise EmptySeries(f"series {panel.symbols[j]!r} has no observations")
        idx = np.zeros(T, dtype=np.int64)
        idx[obs] = obs
        np.maximum.accumulate(idx, out=idx)
        idx[: obs[0]] = obs[0]
        filled[:, j] = panel.prices[idx, j]
    returns = np.diff(filled, axis=0)
    return SyncPanel(prices=filled, returns=returns, zero=returns == 0.0,
                     m=1, symbols=list(panel.symbols))


def subsample(sync: SyncPanel, m: int) -> SyncPanel:
    """Keep every m-th synchronized price and recompute returns."""
    if m < 1:
        raise ValueError("m must be at least 1")
    prices = sync.prices[::m]
    returns = np.diff(prices, axis=0)
    return SyncPanel(prices=prices, returns=returns, zero=returns == 0.0,
                     m=sync.m * m, symbols=list(sync.symbols))


def corr_from_cov(S: np.ndarray) -> np.ndarray:
    """Normalize a covariance matrix (or stack of them) to correlations."""
    S = np.asarray(S, dtype=float)
    d = np.sqrt(np.maximum(np.diagonal(S, axis1=-2, axis2=-1), 1e-300))
    return S / (d[..., :, None] * d[..., None, :])


# ---------------------------------------------------------------------------
# EWMA covariance filter
# ---------------------------------------------------------------------------

def ewma_filter(returns: np.ndarray, gamma: float = EWMA_GAMMA,
                init_window: int = EWMA_INIT_WINDOW,
                backend: str | None = None) -> np.ndarray:
    """Exponentially weighted covariance path S_{t+1} = g S_t + (1-g) r r'.

    S[t] is the prediction for return t, formed before observing it; S[0]
    is the sample covariance of the first ``init_window`` returns.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    r = np.ascontiguousarray(returns, dtype=float)
    T, n = r.shape
    if T < 2:
        raise ValueError("need at least two returns")
    w = min(init_window, T)
    S1 = r[:w].T @ r[:w] / w
    out = np.empty((T, n, n))
    if backend is None:
        backend = default_backend()
    if backend == "cython" and HAVE_KERNELS:
        _kernels.ewma_recursion(r, gamma, np.ascontiguousarray(S1), out)
        return out
    S = S1.copy()
    for t in range(T):
        out[t] = S
        S = gamma * S + (1.0 - gamma) * np.outer(r[t], r[t])
    return out


# ---------------------------------------------------------------------------
# GARCH(1,1) + scalar DCC
# ---------------------------------------------------------------------------

@dataclass
class GarchFit:
    """Variance-targeted Gaussian QML GARCH(1,1) estimate for one series."""

    omega: float
    alpha: float
    beta: float
    sigma2: np.ndarray
    loglik: float


@dataclass
class DCCFit:
    """Two-stage DCC estimate on a synchronized return grid.

    R_path[t] is the conditional correlation for return t given the past.
    """

    a: float
    b: float
    garch: list
    Qbar: np.ndarray
    R_path: np.ndarray
    sigma2: np.ndarray
    loglik: float


def _garch_ll(r2: np.ndarray, omega: float, alpha: float, beta: float,
              s1: float, backend: str) -> tuple[int, float, np.ndarray]:
    T = r2.shape[0]
    sig2 = np.empty(T)
    if backend == "cython" and HAVE_KERNELS:
        status, ll = _kernels.garch_recursion(r2, omega, alpha, beta, s1, sig2)
        return status, ll, sig2
    s = s1
    ll = 0.0
    for t in range(T):
        if not np.isfinite(s) or s <= 1e-300:
            return 1, 0.0, sig2
        sig2[t] = s
        ll += -0.5 * (np.log(2.0 * np.pi) + np.log(s) + r2[t] / s)
        s = omega + alpha * r2[t] + beta * s
    return 0, float(ll), sig2


def garch_fit(returns: np.ndarray, backend: str | None = None) -> GarchFit:
    """Gaussian QML GARCH(1,1) with variance targeting on one return series.

    omega is pinned to sigma_bar^2 (1 - alpha - beta) with sigma_bar^2 the
    sample variance, leaving (alpha, beta) free under alpha, beta >= 0 and
    alpha + beta < 1 through a logistic persistence/share transform.
    """
    r = np.ascontiguousarray(returns, dtype=float).ravel()
    r2 = r * r
    s_bar = float(np.mean(r2))
    if s_bar <= 0.0:
        raise DegenerateReturns("zero sample variance")
    if backend is None:
        backend = default_backend()

    def split(x):
        pers = special.expit(x[0]) * 0.9995
        share = special.expit(x[1])
        alpha = pers * share
        beta = pers - alpha
        return s_bar * (1.0 - pers), alpha, beta

    def negll(x):
        omega, alpha, beta = split(x)
        status, ll, _ = _garch_ll(r2, omega, alpha, beta, s_bar, backend)
        return 1e12 if status else -ll

    x0 = np.array([special.logit(0.95 / 0.9995), special.logit(0.08)])
    res = optimize.minimize(negll, x0, method="L-BFGS-B",
                            options={"maxiter": 200})
    omega, alpha, beta = split(res.x)
    _, ll, sig2 = _garch_ll(r2, omega, alpha, beta, s_bar, backend)
    return GarchFit(omega=omega, alpha=alpha, beta=beta, sigma2=sig2,
                    loglik=float(ll))


def dcc_correlation_path(eps: np.ndarray, a: float, b: float,
                         Qbar: np.ndarray, backend: str | None = None
                         ) -> tuple[np.ndarray, float]:
    """Scalar DCC(1,1) correlation path and its correlation QML term.

    Q_{t+1} = (1-a-b) Qbar + a eps_t eps_t' + b Q_t starting at Qbar;
    R_t is Q_t normalized and prices return t before eps_t enters.
    """
    eps = np.ascontiguousarray(eps, dtype=float)
    T, n = eps.shape
    R_out = np.empty((T, n, n))
    if backend is None:
        backend = default_backend()
    if backend == "cython" and HAVE_KERNELS:
        status, ll = _kernels.dcc_recursion(eps, a, b,
                                            np.ascontiguousarray(Qbar), R_out)
        if status:
            raise SingularCovariance("DCC correlation matrix not positive definite")
        return R_out, float(ll)
    Q = Qbar.copy()
    ll = 0.0
    for t in range(T):
        d = np.sqrt(np.diag(Q))
        if not np.all(np.isfinite(d)) or np.any(d <= 0.0):
            raise SingularCovariance("DCC correlation matrix not positive definite")
        R = Q / np.outer(d, d)
        R_out[t] = R
        try:
            L = np.linalg.cholesky(R)
        except np.linalg.LinAlgError:
            raise SingularCovariance("DCC correlation matrix not positive definite") from None
        w = linalg.solve_triangular(L, eps[t], lower=True)
        ll += -0.5 * (w @ w - eps[t] @ eps[t]) - np.log(np.diag(L)).sum()
        Q = (1.0 - a - b) * Qbar + a * np.outer(eps[t], eps[t]) + b * Q
    return R_out, float(ll)


def dcc_fit(sync: SyncPanel, backend: str | None = None) -> DCCFit:
    """Two-stage QML: per-series GARCH(1,1), then scalar DCC(1,1).

    Raises
    ------
    ValueError
        If the synchronized grid has fewer than 200 returns.
    DegenerateReturns
        If any series has more than 95% exactly-zero returns.
    """
    r = sync.returns
    T, n = r.shape
    if T < DCC_MIN_LENGTH:
        raise ValueError(f"need at least {DCC_MIN_LENGTH} synchronized returns, got {T}")
    zero_frac = sync.zero.mean(axis=0)
    if np.any(zero_frac > DCC_MAX_ZERO_FRACTION):
        j = int(np.argmax(zero_frac))
        raise DegenerateReturns(
            f"series {j} has {100 * zero_frac[j]:.1f}% zero returns")

    stage1 = [garch_fit(r[:, j], backend=backend) for j in range(n)]
    sigma2 = np.column_stack([g.sigma2 for g in stage1])
    eps = r / np.sqrt(sigma2)
    Qbar = corr_from_cov(eps.T @ eps / T)

    def split(x):
        pers = special.expit(x[0]) * 0.9995
        a = pers * special.expit(x[1])
        return a, pers - a

    def negll(x):
        a, b = split(x)
        try:
            _, ll = dcc_correlation_path(eps, a, b, Qbar, backend=backend)
        except SingularCovariance:
            return 1e12
        return -ll

    x0 = np.array([special.logit(0.97 / 0.9995), special.logit(0.05)])
    res = optimize.minimize(negll, x0, method="L-BFGS-B",
                            options={"maxiter": 200})
    a, b = split(res.x)
    R_path, ll = dcc_correlation_path(eps, a, b, Qbar, backend=backend)
    ll_total = ll + sum(g.loglik for g in stage1)
    return DCCFit(a=a, b=b, garch=stage1, Qbar=Qbar, R_path=R_path,
                  sigma2=sigma2, loglik=float(ll_total))


# ---------------------------------------------------------------------------
# subsampling frequency pre-study
# ---------------------------------------------------------------------------

@dataclass
class SubsampleChoice:
    """Selected sampling step per coarse-grid model."""

    dcc: int
    ewma: int


def _coarse_corr_mse(rho_hat: np.ndarray, m: int, rho_true: np.ndarray) -> float:
    """MSE of a piecewise-constant coarse path against the fine truth.

    Coarse return j spans fine steps j*m .. (j+1)*m - 1; its estimate is
    held constant over them.
    """
    J = rho_hat.shape[0]
    expanded = np.repeat(rho_hat, m)
    cover = min(expanded.shape[0], rho_true.shape[0])
    return float(np.mean((expanded[:cover] - rho_true[:cover]) ** 2))


def select_subsample_freq(scenario, candidates=(1, 2, 3, 4, 5, 6),
                          n_pre: int = 20, backend: str | None = None
                          ) -> SubsampleChoice:
    """Choose the sampling step minimizing mean correlation MSE.

    Runs ``n_pre`` replications of the bivariate scenario, previous-tick
    synchronizes each, and scores DCC and EWMA correlation paths on every
    candidate step against the true fine-grid path. Ties break toward the
    smaller step. Candidates whose synchronized grid is too short or
    degenerate for DCC are skipped for that model.
    """
    from . import simulate as sim
    if len(candidates) == 0:
        raise ValueError("candidates must be nonempty")
    cands = sorted(set(int(m) for m in candidates))
    sse = {model: dict.fromkeys(cands, 0.0) for model in ("dcc", "ewma")}
    cnt = {model: dict.fromkeys(cands, 0) for model in ("dcc", "ewma")}
    for i in range(n_pre):
        path = sim.simulate_bivariate(
            scenario.pattern, scenario.delta, scenario.lam, scenario.T,
            np.random.SeedSequence((scenario.seed, i)))
        sync = previous_tick_sync(path.panel)
        for m in cands:
            sub = subsample(sync, m)
            S = ewma_filter(sub.returns, backend=backend)
            rho_e = corr_from_cov(S)[:, 0, 1]
            sse["ewma"][m] += _coarse_corr_mse(rho_e, m, path.rho)
            cnt["ewma"][m] += 1
            try:
                fit = dcc_fit(sub, backend=backend)
            except (ValueError, DegenerateReturns):
                continue
            sse["dcc"][m] += _coarse_corr_mse(fit.R_path[:, 0, 1], m, path.rho)
            cnt["dcc"][m] += 1
    best = {}
    for model in ("dcc", "ewma"):
        scored = [(sse[model][m] / cnt[model][m], m) for m in cands
                  if cnt[model][m] > 0]
        if not scored:
            raise DegenerateReturns("no candidate step produced a usable fit")
        best[model] = min(scored)[1]
    return SubsampleChoice(dcc=best["dcc"], ewma=best["ewma"])


# ---------------------------------------------------------------------------
# Student-t score-driven covariance filter
# ---------------------------------------------------------------------------

@dataclass
class TGasResult:
    """Output of one t-GAS filter pass over a returns panel."""

    loglik: float
    f_path: np.ndarray
    loglik_path: np.ndarray
    n_obs_steps: int

    def sigma_path(self, n: int, parameterization: str) -> np.ndarray:
        """(T, n, n) conditional covariances implied by f_path."""
        T = self.f_path.shape[0]
        fake = np.zeros((T, n + self.f_path.shape[1]))
        fake[:, n:] = self.f_path
        _, d, R = sd.snapshots_from_path(fake, n, parameterization)
        return d[:, :, None] * R * d[:, None, :]


@dataclass
class TGasFit:
    """MLE of the t-GAS static coefficients."""

    theta: sd.StaticParams
    nu: float
    loglik: float
    aic: float
    f1: np.ndarray
    converged: bool
    n_iter: int


def returns_from_panel(panel: ObservationPanel) -> tuple[np.ndarray, np.ndarray]:
    """One-step returns and their observation mask.

    A return at t exists only if the prices at t and t-1 are both
    observed; unobserved returns are zero-filled and masked out.
    """
    rmask = panel.mask[1:] & panel.mask[:-1]
    r = np.where(rmask, np.diff(np.where(panel.mask, panel.prices, 0.0),
                                axis=0), 0.0)
    return r, rmask


def _tgas_sigma_dots(f: np.ndarray, n: int, parameterization: str):
    """Sigma = D R D and d Sigma / d f_j under the [log d^2, phi] layout."""
    fake = np.concatenate([np.zeros(n), f])
    snap, _, Q_dot = sd.assemble(fake, n, parameterization)
    k = f.shape[0]
    slabs = np.empty((k, n, n))
    for j in range(k):
        slab = Q_dot[:, n + j].reshape(n, n, order="F")
        if j < n:
            slab = slab * np.exp(f[j])  # log link on the variance block
        slabs[j] = slab
    return snap, slabs


def tgas_step_python(r_t: np.ndarray, mask_t: np.ndarray, f: np.ndarray,
                     n: int, parameterization: str, nu: float
                     ) -> tuple[np.ndarray, float]:
    """Score and log-likelihood of one observation under the Student-t model.

    The density is the marginal t of the observed subvector with scale
    matrix (the subblock of) Sigma = D R D and the (nu - 2) normalization
    making Sigma the conditional covariance; the score is inverse-Fisher
    scaled with the same damped pseudo-inverse as the Gaussian filter.
    """
    k = f.shape[0]
    idx = np.flatnonzero(mask_t)
    m = idx.size
    if m == 0:
        return np.zeros(k), 0.0
    snap, slabs = _tgas_sigma_dots(f, n, parameterization)
    Sig = (snap.d[:, None] * snap.R * snap.d[None, :])[np.ix_(idx, idx)]
    v = r_t[idx]
    L = np.linalg.cholesky(Sig)
    w = linalg.solve_triangular(L, v, lower=True)
    mq = float(w @ w)
    ll = (special.gammaln(0.5 * (nu + m)) - special.gammaln(0.5 * nu)
          - 0.5 * m * np.log((nu - 2.0) * np.pi)
          - np.log(np.diag(L)).sum()
          - 0.5 * (nu + m) * np.log1p(mq / (nu - 2.0)))

    # whitened derivative slabs S_j = L^-1 dSigma_j L^-T
    wt = (nu + m) / (nu - 2.0 + mq)
    g = (nu + m) / (nu + m + 2.0)
    sq = np.sqrt(0.5 * g)
    sigu = np.sqrt(nu / (2.0 * (nu + m + 2.0)))
    tau = (sigu - sq) / m
    ghat = np.empty((k, m * m))
    eye = np.eye(m)
    for j in range(k):
        Sj = slabs[j][np.ix_(idx, idx)]
        Sj = linalg.solve_triangular(L, Sj, lower=True)
        Sj = linalg.solve_triangular(L, Sj.T, lower=True)
        ghat[j] = (sq * Sj + tau * np.trace(Sj) * eye).ravel()
    tau_u = (1.0 / sigu - 1.0 / sq) / m
    dev = wt * np.outer(w, w) - eye
    u = 0.5 * (dev / sq + tau_u * np.trace(dev) * eye).ravel()
    nabla = ghat @ u
    fisher = ghat @ ghat.T
    s = sd.scaled_score(nabla, fisher)
    return s, float(ll)


def _tgas_filter_python(r, rmask, theta, nu, f1):
    T = r.shape[0]
    n = theta.n
    k = f1.shape[0]
    param = theta.parameterization
    f = f1.copy()
    f_path = np.empty((T, k))
    ll_path = np.zeros(T)
    loglik = 0.0
    n_obs = 0
    for t in range(T):
        f_path[t] = f
        try:
            s, ll_t = tgas_step_python(r[t], rmask[t], f, n, param, nu)
        except np.linalg.LinAlgError:
            raise NonInvertibleF(t=t) from None
        if rmask[t].any():
            loglik += ll_t
            ll_path[t] = ll_t
            n_obs += 1
        f_next = theta.omega + theta.A * s + theta.B * f
        if not np.isfinite(f_next).all() or np.any(np.abs(f_next[:n]) > sd.LOG_VAR_CAP):
            raise DivergedFilter(t=t)
        f = f_next
    return TGasResult(loglik=float(loglik), f_path=f_path,
                      loglik_path=ll_path, n_obs_steps=n_obs)


def tgas_filter(r: np.ndarray, rmask: np.ndarray, theta: sd.StaticParams,
                nu: float, f1: np.ndarray, backend: str | None = None
                ) -> TGasResult:
    """Run the Student-t score-driven covariance filter on a returns panel.

    Parameters
    ----------
    r, rmask : (T, n) returns and their observation mask.
    theta : GAS coefficients over the k = n + q blocks [log d^2, phi].
    nu : degrees of freedom, must exceed 2.
    f1 : initial parameter vector.
    backend : "cython", "python" or None for the default.
    """
    if nu <= 2.0:
        raise ValueError("nu must exceed 2")
    r = np.ascontiguousarray(r, dtype=float)
    rmask = np.ascontiguousarray(rmask, dtype=bool)
    f1 = np.ascontiguousarray(f1, dtype=float)
    T = r.shape[0]
    k = f1.shape[0]
    if backend is None:
        backend = default_backend()
    if backend == "cython" and HAVE_KERNELS:
        f_path = np.empty((T, k))
        ll_path = np.zeros(T)
        status, loglik, t_fail, n_obs = _kernels.tgas_filter(
            r, np.ascontiguousarray(rmask, dtype=np.uint8),
            _PARAM_TAG[theta.parameterization], nu,
            np.ascontiguousarray(theta.omega), np.ascontiguousarray(theta.A),
            np.ascontiguousarray(theta.B), f1, f_path, ll_path)
        if status == 1:
            raise DivergedFilter(t=t_fail)
        if status == 2:
            raise NonInvertibleF(t=t_fail)
        return TGasResult(loglik=float(loglik), f_path=f_path,
                          loglik_path=ll_path, n_obs_steps=int(n_obs))
    return _tgas_filter_python(r, rmask, theta, nu, f1)


def tgas_init(r: np.ndarray, rmask: np.ndarray, parameterization: str
              ) -> np.ndarray:
    """Moment initializer: f1 = [log pairwise variances, correlation angles]."""
    n = r.shape[1]
    var = np.array([np.mean(r[rmask[:, j], j] ** 2) if rmask[:, j].any()
                    else 1e-8 for j in range(n)])
    var = np.maximum(var, 1e-12)
    C = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            both = rmask[:, i] & rmask[:, j]
            if both.sum() >= 2:
                num = np.mean(r[both, i] * r[both, j])
                rho = num / np.sqrt(var[i] * var[j])
                C[i, j] = C[j, i] = np.clip(rho, -0.99, 0.99)
    w, V = np.linalg.eigh(C)
    C = (V * np.maximum(w, 1e-4)) @ V.T
    d = np.sqrt(np.diag(C))
    C = C / np.outer(d, d)
    np.fill_diagonal(C, 1.0)
    if parameterization == sd.PARAM_HYPER:
        phi = corr.angles_from_corr(C)
    else:
        off = C[~np.eye(n, dtype=bool)]
        phi = np.array([corr.equicorr_theta_from_rho(float(off.mean()), n)])
    return np.concatenate([np.log(var), phi])


def _tgas_pack(mu_d, mu_r, a_d, a_r, b_d, b_r):
    sp_inv = lambda a: a + np.log1p(-np.exp(-a))
    return np.array([mu_d, mu_r, sp_inv(a_d), sp_inv(a_r),
                     special.logit(b_d), special.logit(b_r)])


def _tgas_unpack(x, n, parameterization):
    q = sd.n_corr_params(n, parameterization)
    a = np.logaddexp(0.0, x[2:4])
    b = special.expit(x[4:6])
    mu = x[0:2]
    omega = np.concatenate([np.full(n, mu[0] * (1.0 - b[0])),
                            np.full(q, mu[1] * (1.0 - b[1]))])
    A = np.concatenate([np.full(n, a[0]), np.full(q, a[1])])
    B = np.concatenate([np.full(n, b[0]), np.full(q, b[1])])
    return sd.StaticParams(n, parameterization, omega, A, B, "I")


def tgas_fit(panel: ObservationPanel, parameterization: str = sd.PARAM_HYPER,
             nu: float | None = 3.0, maxiter: int = 100, fd_step: float = 1e-3,
             backend: str | None = None) -> TGasFit:
    """Estimate the t-GAS coefficients by L-BFGS-B on a price panel.

    Returns are formed between consecutive observations only. With
    ``nu=None`` the degrees of freedom are estimated through a
    2 + softplus transform; otherwise nu is held fixed.
    """
    r, rmask = returns_from_panel(panel)
    n = panel.n
    f1 = tgas_init(r, rmask, parameterization)
    fit_nu = nu is None

    def objective(x):
        theta = _tgas_unpack(x, n, parameterization)
        nu_x = 2.0 + np.logaddexp(0.0, x[6]) if fit_nu else nu
        try:
            res = tgas_filter(r, rmask, theta, nu_x, f1, backend=backend)
        except (DivergedFilter, NonInvertibleF):
            return 1e12
        if not np.isfinite(res.loglik):
            return 1e12
        return -res.loglik

    q = sd.n_corr_params(n, parameterization)
    mu0_d = float(np.mean(f1[:n]))
    mu0_r = float(np.mean(f1[n:])) if q else 0.0
    x0 = _tgas_pack(mu0_d, mu0_r, 0.02, 0.02, 0.97, 0.97)
    if fit_nu:
        x0 = np.append(x0, np.log(np.expm1(6.0)))  # start at nu = 8

    def fused(x):
        f0 = objective(x)
        grad = np.empty_like(x)
        for i in range(x.size):
            e = np.zeros_like(x)
            e[i] = fd_step
            grad[i] = (objective(x + e) - objective(x - e)) / (2.0 * fd_step)
        return f0, grad

    res = optimize.minimize(fused, x0, jac=True, method="L-BFGS-B",
                            options={"maxiter": maxiter, "ftol": 1e-7})
    theta = _tgas_unpack(res.x, n, parameterization)
    nu_hat = float(2.0 + np.logaddexp(0.0, res.x[6])) if fit_nu else float(nu)
    ll = -float(res.fun)
    p = 7 if fit_nu else 6
    return TGasFit(theta=theta, nu=nu_hat, loglik=ll, aic=2.0 * p - 2.0 * ll,
                   f1=f1, converged=bool(res.success), n_iter=int(res.nit))
