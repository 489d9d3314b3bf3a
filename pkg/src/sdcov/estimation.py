"""Filtering pass, EM initializer and maximum-likelihood estimation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.special import expit, logit

from . import correlation as corr
from . import scoredriver as sd
from ._backend import run_filter
from ._engine import FilterResult
from .errors import (DivergedFilter, InsufficientPresample, NonInvertibleF,
                     ParameterOverflow, SingularCovariance)
from .panel import ObservationPanel

_PENALTY = 1e12
MIN_PRESAMPLE = 50


@dataclass
class FilterInit:
    """Initial conditions of the score-driven filter."""

    f1: np.ndarray
    a1: np.ndarray
    P1: np.ndarray


def filter_pass(panel: ObservationPanel, theta: sd.StaticParams, init: FilterInit,
                backend: str | None = None, collect_scores: bool = False
                ) -> FilterResult:
    """Run the score-driven filter over the whole panel.

    Steps with no observations contribute nothing to the log-likelihood and
    advance the state by prediction only.
    """
    return run_filter(panel, theta, init.f1, init.a1, init.P1,
                      backend=backend, collect_scores=collect_scores)


def aic(loglik: float, n_params: int) -> float:
    """Akaike criterion 2p - 2 loglik."""
    return 2.0 * n_params - 2.0 * loglik


def n_free_params(restriction: str) -> int:
    return {"I": 9, "II": 3}[restriction]


# ---------------------------------------------------------------------------
# EM initializer: constant-parameter local level on the presample
# ---------------------------------------------------------------------------

def _psd_floor(M: np.ndarray, rel: float = 1e-10) -> np.ndarray:
    """Symmetrize and floor eigenvalues at rel * max eigenvalue."""
    M = 0.5 * (M + M.T)
    w, V = np.linalg.eigh(M)
    floor = max(w[-1], 1e-12) * rel
    w = np.maximum(w, floor)
    return (V * w) @ V.T


def _static_smoother(y: np.ndarray, mask: np.ndarray, H: np.ndarray, Q: np.ndarray,
                     a1: np.ndarray, P1: np.ndarray):
    """Kalman filter + RTS smoother for x_{t+1} = x_t + eta, eta ~ N(0, Q).

    Returns smoothed means, covariances, lag-one covariances
    Cov(x_t, x_{t-1} | Y) and the log-likelihood.
    """
    T, n = y.shape
    af = np.empty((T, n))
    Pf = np.empty((T, n, n))
    a_pred = np.empty((T, n))
    P_pred = np.empty((T, n, n))
    K_last = np.zeros((n, n))
    mask_T_idx = None

    a, P = a1.copy(), P1.copy()
    loglik = 0.0
    for t in range(T):
        a_pred[t], P_pred[t] = a, P
        idx = np.flatnonzero(mask[t])
        if idx.size:
            v = y[t, idx] - a[idx]
            F = (P + np.diag(H))[np.ix_(idx, idx)]
            F_inv = np.linalg.inv(F)
            K = P[:, idx] @ F_inv
            a = a + K @ v
            Pn = P - K @ P[idx, :]
            P = 0.5 * (Pn + Pn.T)
            _, logdet = np.linalg.slogdet(F)
            loglik += -0.5 * idx.size * np.log(2 * np.pi) \
                - 0.5 * (logdet + v @ F_inv @ v)
            if t == T - 1:
                K_last, mask_T_idx = K, idx
        af[t], Pf[t] = a, P
        a, P = a.copy(), P + Q

    xs = np.empty((T, n))
    Vs = np.empty((T, n, n))
    Vlag = np.zeros((T, n, n))  # Vlag[t] = Cov(x_t, x_{t-1} | Y), t >= 1
    xs[-1], Vs[-1] = af[-1], Pf[-1]
    J = np.empty((T, n, n))
    for t in range(T - 2, -1, -1):
        Pp = Pf[t] + Q  # P_{t+1|t}
        J[t] = Pf[t] @ np.linalg.inv(Pp)
        xs[t] = af[t] + J[t] @ (xs[t + 1] - af[t])
        Vt = Pf[t] + J[t] @ (Vs[t + 1] - Pp) @ J[t].T
        Vs[t] = 0.5 * (Vt + Vt.T)
    if T >= 2:
        ImKG = np.eye(n)
        if mask_T_idx is not None:
            G = np.zeros((mask_T_idx.size, n))
            G[np.arange(mask_T_idx.size), mask_T_idx] = 1.0
            ImKG = np.eye(n) - K_last @ G
        Vlag[-1] = ImKG @ Pf[-2]
        for t in range(T - 2, 0, -1):
            Vlag[t] = Pf[t] @ J[t - 1].T + J[t] @ (Vlag[t + 1] - Pf[t]) @ J[t - 1].T
    return xs, Vs, Vlag, loglik


def em_init(panel: ObservationPanel, parameterization: str,
            presample_len: int = 100, max_iter: int = 50, tol: float = 1e-6
            ) -> FilterInit:
    """Initialize (f1, a1, P1) by EM on a constant-parameter presample model.

    Fits a local-level model with diagonal H and unrestricted positive
    semi-definite Q on the first ``presample_len`` rows, then maps
    (H, D, R) = (H, sqrt(diag Q), corr(Q)) into f1 through the link. a1 is
    the first price row with missing entries replaced by the cross-sectional
    mean, and P1 = Q-hat.

    Raises
    ------
    InsufficientPresample
        If fewer than 50 rows are available.
    """
    if min(presample_len, panel.T) < MIN_PRESAMPLE:
        raise InsufficientPresample(
            f"presample of {min(presample_len, panel.T)} rows; need >= {MIN_PRESAMPLE}")
    sub = panel.subpanel(slice(0, min(presample_len, panel.T)))
    y, mask = np.nan_to_num(sub.prices, nan=0.0), sub.mask
    T, n = y.shape

    # moment-based starting values from previous-tick-filled differences
    filled = np.where(mask, y, np.nan)
    for j in range(n):
        col = filled[:, j]
        if np.isnan(col).all():
            filled[:, j] = 0.0
            continue
        idx = np.where(~np.isnan(col), np.arange(T), 0)
        np.maximum.accumulate(idx, out=idx)
        col_ff = col[idx]
        first = col[~np.isnan(col)][0]
        col_ff[np.isnan(col_ff)] = first
        filled[:, j] = col_ff
    diffs = np.diff(filled, axis=0)
    var = diffs.var(axis=0)
    var = np.where(var > 1e-12, var, max(var.max(), 1e-8))
    Q = _psd_floor(np.cov(diffs.T) if n > 1 else np.array([[var[0]]]), 1e-8)
    Q = 0.5 * Q + 0.5 * np.diag(np.diag(Q))  # shrink off-diagonals at start
    H = 0.25 * var

    a1_em = filled[0].copy()
    P1_em = np.diag(4.0 * var) + 1e-9 * np.eye(n)

    prev_ll = -np.inf
    for _ in range(max_iter):
        xs, Vs, Vlag, ll = _static_smoother(y, mask, H, Q, a1_em, P1_em)
        # M step
        d = xs[1:] - xs[:-1]
        S = (Vs[1:].sum(axis=0) + Vs[:-1].sum(axis=0)
             - Vlag[1:].sum(axis=0) - Vlag[1:].sum(axis=0).T
             + d.T @ d)
        Q = _psd_floor(S / (T - 1), 1e-10)
        resid2 = (y - xs) ** 2 + np.einsum("tii->ti", Vs)
        with np.errstate(invalid="ignore"):
            H = np.where(mask.any(axis=0),
                         np.where(mask, resid2, 0.0).sum(axis=0)
                         / np.maximum(mask.sum(axis=0), 1),
                         H)
        H = np.maximum(H, 1e-12)
        if np.isfinite(prev_ll) and abs(ll - prev_ll) <= tol * max(1.0, abs(prev_ll)):
            break
        prev_ll = ll

    dvec = np.sqrt(np.maximum(np.diag(Q), 1e-12))
    R = Q / np.outer(dvec, dvec)
    np.fill_diagonal(R, 1.0)
    R = _psd_floor(R, 1e-8)
    d_norm = np.sqrt(np.diag(R))
    R = R / np.outer(d_norm, d_norm)
    np.fill_diagonal(R, 1.0)

    if parameterization == sd.PARAM_HYPER:
        try:
            phi = corr.angles_from_corr(R)
        except SingularCovariance:
            phi = corr.angles_from_corr(_psd_floor(R, 1e-4))
    else:
        offdiag = R[~np.eye(n, dtype=bool)]
        phi = np.array([corr.equicorr_theta_from_rho(float(offdiag.mean()), n)])

    f1 = np.concatenate([np.log(H), np.log(dvec ** 2), phi])
    row0 = panel.prices[0]
    obs0 = panel.mask[0]
    fill_val = row0[obs0].mean() if obs0.any() else float(np.nanmean(panel.prices))
    a1 = np.where(obs0, row0, fill_val)
    return FilterInit(f1=f1, a1=a1, P1=Q)


# ---------------------------------------------------------------------------
# Maximum likelihood
# ---------------------------------------------------------------------------

def _softplus(x):
    return np.logaddexp(0.0, x)


def _softplus_inv(a):
    a = np.asarray(a, dtype=float)
    return a + np.log1p(-np.exp(-a))


@dataclass
class OptimizerConfig:
    """L-BFGS-B settings for mle_fit.

    Gradients are central finite differences with step ``fd_step`` in the
    transformed coordinates. ``a_starts`` seeds the multistart over the
    score-loading scale.
    """

    gtol: float = 1e-5
    ftol: float = 1e-7
    fd_step: float = 1e-3
    maxiter: int = 100
    a_starts: tuple = (0.005, 0.02, 0.05)
    b_start: float = 0.97
    backend: str | None = None


@dataclass
class FitResult:
    theta: sd.StaticParams
    loglik: float
    aic: float
    x: np.ndarray
    converged: bool
    n_iter: int
    init: FilterInit
    start_logliks: list = field(default_factory=list)


def pack_params(theta: sd.StaticParams) -> np.ndarray:
    """Transformed free coordinates.

    Restriction I packs [mu, softplus^-1(A), logit(B)] with mu the
    stationary block means omega / (1 - B); the intercepts and persistence
    parameters are strongly confounded in the raw (omega, B) coordinates
    (the likelihood has a long ridge along constant omega / (1 - B)), and
    optimizing in the mean coordinates removes it. Restriction II has only
    the three A blocks.
    """
    n = theta.n
    a = [theta.A[0], theta.A[n], theta.A[2 * n]]
    if theta.restriction == "II":
        return _softplus_inv(np.asarray(a))
    b = np.array([theta.B[0], theta.B[n], theta.B[2 * n]])
    w = np.array([theta.omega[0], theta.omega[n], theta.omega[2 * n]])
    mu = w / (1.0 - b)
    return np.concatenate([mu, _softplus_inv(np.asarray(a)), logit(b)])


def unpack_params(x: np.ndarray, n: int, parameterization: str, restriction: str
                  ) -> sd.StaticParams:
    if restriction == "II":
        a = _softplus(np.asarray(x))
        return sd.StaticParams.restriction_ii(n, parameterization, *a)
    a = _softplus(x[3:6])
    b = expit(x[6:9])
    w = x[:3] * (1.0 - b)
    return sd.StaticParams.restriction_i(n, parameterization, *w, *a, *b)


def _objective_factory(panel, n, parameterization, restriction, init, backend):
    def fun(x):
        theta = unpack_params(x, n, parameterization, restriction)
        try:
            res = run_filter(panel, theta, init.f1, init.a1, init.P1, backend=backend)
        except (DivergedFilter, NonInvertibleF, ParameterOverflow):
            return _PENALTY
        if not np.isfinite(res.loglik):
            return _PENALTY
        return -res.loglik
    return fun


def _value_and_grad(fun, h):
    def fused(x):
        f0 = fun(x)
        g = np.empty_like(x)
        for i in range(x.size):
            e = np.zeros_like(x)
            e[i] = h
            g[i] = (fun(x + e) - fun(x - e)) / (2.0 * h)
        return f0, g
    return fused


class _BestTracker:
    """Record the best point over all objective evaluations.

    L-BFGS-B can terminate abnormally with ``res.x`` at the last evaluated
    point rather than the best one; keeping our own record makes the fit
    monotone in the evaluations actually performed.
    """

    def __init__(self, fun):
        self._fun = fun
        self.best_f = np.inf
        self.best_x = None

    def __call__(self, x):
        f = self._fun(x)
        if f < self.best_f:
            self.best_f = f
            self.best_x = np.array(x, dtype=float, copy=True)
        return f


def mle_fit(panel: ObservationPanel, restriction: str, init: FilterInit,
            parameterization: str, config: OptimizerConfig | None = None
            ) -> FitResult:
    """Estimate the static GAS coefficients by L-BFGS-B with multistart.

    Each start initializes all three A-blocks at one value from
    ``config.a_starts``; under restriction I, B starts at ``config.b_start``
    and the stationary means at the block means of f1 so the recursion
    starts near the presample level. The best final likelihood wins.
    """
    cfg = config or OptimizerConfig()
    n = panel.n
    fun = _objective_factory(panel, n, parameterization, restriction, init, cfg.backend)

    hs, ds, rs = sd.block_slices(n, parameterization)
    f1_means = [init.f1[hs].mean(), init.f1[ds].mean(), init.f1[rs].mean()]

    best_f = np.inf
    best_x = None
    best_res = None
    start_lls = []
    for a0 in cfg.a_starts:
        if restriction == "II":
            x0 = _softplus_inv(np.full(3, a0))
        else:
            x0 = np.concatenate([f1_means, _softplus_inv(np.full(3, a0)),
                                 logit(np.full(3, cfg.b_start))])
        tracker = _BestTracker(fun)
        fused = _value_and_grad(tracker, cfg.fd_step)
        res = optimize.minimize(fused, x0, jac=True, method="L-BFGS-B",
                                options={"maxiter": cfg.maxiter, "ftol": cfg.ftol,
                                         "gtol": cfg.gtol})
        start_lls.append(-tracker.best_f)
        if tracker.best_f < best_f:
            best_f = tracker.best_f
            best_x = tracker.best_x
            best_res = res

    theta = unpack_params(best_x, n, parameterization, restriction)
    ll = -float(best_f)
    p = n_free_params(restriction)
    return FitResult(theta=theta, loglik=ll, aic=aic(ll, p), x=best_x,
                     converged=bool(best_res.success), n_iter=int(best_res.nit),
                     init=init, start_logliks=start_lls)
