"""Score computation and the GAS parameter recursion.

The time-varying parameter vector is

    f = [log diag(H), log diag(D^2), phi],   k = 2n + q,

where H is the diagonal noise covariance, D the diagonal scale of the
state-innovation covariance Q = D R D, and phi parameterizes R (q = n(n-1)/2
hyperspherical angles, or one equicorrelation parameter). Derivatives are
carried with respect to the auxiliary vector f~ = (exp f_1..2n, f_2n+1..k)
and mapped back through the diagonal link Jacobian.

The recursion is f_{t+1} = omega + A s_t + B f_t with s_t the inverse-Fisher
scaled score of the conditional Gaussian log-likelihood.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import correlation as corr
from .errors import ParameterOverflow

PARAM_HYPER = "hyperspherical"
PARAM_EQUI = "equicorrelation"

LOG_VAR_CAP = 50.0     # |log variance| beyond this is treated as divergence
# Relative spectral damping in the scaled-score pseudo-inverse: eigenvalue w
# is inverted as w / (w^2 + (SCORE_DAMP_REL * lambda_max)^2), which equals
# 1/w for well-identified directions and rolls off smoothly to zero below
# the damping scale. Two failure modes rule out a plain (or hard-truncated)
# inverse here. The Fisher matrix has an n-dimensional subspace (noise
# variance vs signal variance trade-offs) whose information comes only from
# lagged state sensitivities; its eigenvalues start at exactly zero and climb
# slowly, and inverting them while small injects score components with
# variance 1/eig that blow up the parameter recursion. Truncating them
# instead keeps paths finite but makes the likelihood discontinuous in the
# static parameters: one flipped keep/drop decision perturbs f from that step
# on, which is fatal for derivative-based estimation. The smooth roll-off
# keeps paths stable and the likelihood differentiable at once.
SCORE_DAMP_REL = 1e-3
_EXP_MAX = 709.0       # exp() overflows double beyond this


def n_corr_params(n: int, parameterization: str) -> int:
    if parameterization == PARAM_HYPER:
        return corr.n_angles(n)
    if parameterization == PARAM_EQUI:
        return 1
    raise ValueError(f"unknown parameterization {parameterization!r}")


def state_dim(n: int, parameterization: str) -> int:
    """Length k = 2n + q of the time-varying parameter vector."""
    return 2 * n + n_corr_params(n, parameterization)


def block_slices(n: int, parameterization: str) -> tuple[slice, slice, slice]:
    """(H block, D block, correlation block) slices into f."""
    k = state_dim(n, parameterization)
    return slice(0, n), slice(n, 2 * n), slice(2 * n, k)


def link(f: np.ndarray, n: int, parameterization: str) -> np.ndarray:
    """Auxiliary vector f~: exponentiate the two log-variance blocks.

    Raises ParameterOverflow if an exponential would overflow.
    """
    f = np.asarray(f, dtype=float)
    if np.any(f[: 2 * n] > _EXP_MAX):
        raise ParameterOverflow("log-variance entry overflows exp()")
    out = f.copy()
    out[: 2 * n] = np.exp(f[: 2 * n])
    return out


def link_jacobian(f: np.ndarray, n: int, parameterization: str) -> np.ndarray:
    """Diagonal of d f~ / d f: the variances themselves, ones elsewhere."""
    J = np.ones(state_dim(n, parameterization))
    J[: 2 * n] = np.exp(np.minimum(f[: 2 * n], _EXP_MAX))
    return J


@dataclass
class CovarianceSnapshot:
    """Covariances implied by one value of f."""

    h: np.ndarray   # (n,) diagonal of H
    d: np.ndarray   # (n,) diagonal of D (standard deviations)
    R: np.ndarray   # (n, n) correlation matrix
    Q: np.ndarray   # (n, n) state innovation covariance D R D

    @property
    def H(self) -> np.ndarray:
        return np.diag(self.h)


def assemble(f: np.ndarray, n: int, parameterization: str
             ) -> tuple[CovarianceSnapshot, np.ndarray, np.ndarray]:
    """Build (H, D, R, Q) and the Jacobians of vec(H), vec(Q) w.r.t. f~.

    Returns
    -------
    snapshot : CovarianceSnapshot
    H_dot : ndarray, shape (n*n, k)
        Column i < n has a single 1 at the (i, i) position; zero elsewhere.
    Q_dot : ndarray, shape (n*n, k)
        d vec(Q)/d d_i^2 = (e_i (RD)_i. + (DR)_.i e_i') / (2 D_ii) and
        d vec(Q)/d phi_m = vec(D dR_m D); the H block is zero.
    """
    f = np.asarray(f, dtype=float)
    k = state_dim(n, parameterization)
    hs, ds, rs = block_slices(n, parameterization)
    ft = link(f, n, parameterization)
    h = ft[hs]
    d2 = ft[ds]
    d = np.sqrt(d2)
    phi = f[rs]

    if parameterization == PARAM_HYPER:
        R = corr.corr_from_angles(phi, n)
        dR = corr.dR_hyperspherical(phi, n)
    else:
        R = corr.equicorr_matrix(float(phi[0]), n)
        _, dR = corr.equicorr_derivative(float(phi[0]), n)
    Q = (d[:, None] * R) * d[None, :]
    snap = CovarianceSnapshot(h=h, d=d, R=R, Q=Q)

    H_dot = np.zeros((n * n, k))
    H_dot[np.arange(n) * (n + 1), np.arange(n)] = 1.0

    Q_dot = np.zeros((n * n, k))
    DR = d[:, None] * R          # rows scaled: (D R)
    for i in range(n):
        dQ = np.zeros((n, n))
        dQ[i, :] += DR[:, i]      # e_i (R D)_i. ; RD row i equals DR column i
        dQ[:, i] += DR[:, i]
        Q_dot[:, n + i] = dQ.ravel(order="F") / (2.0 * d[i])
    for m in range(dR.shape[1]):
        dRm = dR[:, m].reshape(n, n, order="F")
        Q_dot[:, 2 * n + m] = ((d[:, None] * dRm) * d[None, :]).ravel(order="F")
    return snap, H_dot, Q_dot


def score_fisher(v: np.ndarray, F_inv: np.ndarray, v_dot: np.ndarray,
                 F_dot: np.ndarray, link_jac: np.ndarray
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Score and Fisher information of the step log-likelihood w.r.t. f.

    In auxiliary coordinates,

    grad~  = -1/2 [ F_dot' (I kron F^{-1}) vec(I - v v' F^{-1}) + 2 v_dot' F^{-1} v ]
    fisher~ = 1/2 F_dot' (F^{-1} kron F^{-1}) F_dot + v_dot' F^{-1} v_dot

    and both are mapped through the diagonal link Jacobian.
    """
    n_t = v.shape[0]
    M = np.eye(n_t) - np.outer(v, v) @ F_inv
    grad_t = -0.5 * (F_dot.T @ (F_inv @ M).ravel(order="F")
                     + 2.0 * (v_dot.T @ (F_inv @ v)))
    W = np.kron(F_inv, F_inv) @ F_dot
    fisher_t = 0.5 * (F_dot.T @ W) + v_dot.T @ F_inv @ v_dot

    nabla = link_jac * grad_t
    fisher = link_jac[:, None] * fisher_t * link_jac[None, :]
    return nabla, 0.5 * (fisher + fisher.T)


def scaled_score(nabla: np.ndarray, fisher: np.ndarray) -> np.ndarray:
    """Damped pseudo-inverse scaling s = fisher^+ nabla.

    Eigenvalues are inverted as w / (w^2 + (SCORE_DAMP_REL * lambda_max)^2),
    so directions with w >> damping scale get 1/w while weakly identified
    ones roll off smoothly to zero. Exactly null directions contribute
    nothing, matching the minimum-norm pseudo-inverse solution. A zero or
    negative-semidefinite Fisher matrix yields s = 0.
    """
    fisher = 0.5 * (fisher + fisher.T)
    w, V = np.linalg.eigh(fisher)
    wmax = w[-1] if w.size else 0.0
    if wmax <= 0.0:
        return np.zeros_like(nabla)
    lam = SCORE_DAMP_REL * wmax
    inv = w / (w * w + lam * lam)
    return V @ (inv * (V.T @ nabla))


@dataclass(frozen=True)
class StaticParams:
    """Static coefficients of the GAS recursion f_{t+1} = omega + A s + B f.

    A and B are diagonal; restriction "I" keeps them block-constant over the
    H / D / correlation groups, restriction "II" pins omega = 0, B = I.
    """

    n: int
    parameterization: str
    omega: np.ndarray
    A: np.ndarray
    B: np.ndarray
    restriction: str

    @property
    def k(self) -> int:
        return state_dim(self.n, self.parameterization)

    @classmethod
    def restriction_i(cls, n: int, parameterization: str,
                      omega_h: float, omega_d: float, omega_r: float,
                      a_h: float, a_d: float, a_r: float,
                      b_h: float, b_d: float, b_r: float) -> "StaticParams":
        q = n_corr_params(n, parameterization)
        rep = lambda x, y, z: np.concatenate([np.full(n, x), np.full(n, y), np.full(q, z)])
        return cls(n, parameterization, rep(omega_h, omega_d, omega_r),
                   rep(a_h, a_d, a_r), rep(b_h, b_d, b_r), "I")

    @classmethod
    def restriction_ii(cls, n: int, parameterization: str,
                       a_h: float, a_d: float, a_r: float) -> "StaticParams":
        q = n_corr_params(n, parameterization)
        k = 2 * n + q
        A = np.concatenate([np.full(n, a_h), np.full(n, a_d), np.full(q, a_r)])
        return cls(n, parameterization, np.zeros(k), A, np.ones(k), "II")

    def stationary_f(self) -> np.ndarray:
        """omega / (1 - B) where defined; zeros in unit-root blocks."""
        one_minus_b = 1.0 - self.B
        out = np.zeros(self.k)
        ok = np.abs(one_minus_b) > 1e-12
        out[ok] = self.omega[ok] / one_minus_b[ok]
        return out


def gas_update(theta: StaticParams, f: np.ndarray, s: np.ndarray) -> np.ndarray:
    """f_{t+1} = omega + A s_t + B f_t, guarding the log-variance blocks.

    Raises ParameterOverflow if any updated log-variance leaves [-50, 50].
    """
    f_next = theta.omega + theta.A * s + theta.B * f
    if np.any(np.abs(f_next[: 2 * theta.n]) > LOG_VAR_CAP) or not np.isfinite(f_next).all():
        raise ParameterOverflow("GAS update left the log-variance stability region")
    return f_next


def snapshots_from_path(f_path: np.ndarray, n: int, parameterization: str
                        ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Expand a (T, k) path of f into H-diag, D-diag and R paths."""
    T = f_path.shape[0]
    rs = block_slices(n, parameterization)[2]
    h = np.exp(f_path[:, :n])
    d = np.exp(0.5 * f_path[:, n:2 * n])
    R = np.empty((T, n, n))
    for t in range(T):
        phi = f_path[t, rs]
        if parameterization == PARAM_HYPER:
            R[t] = corr.corr_from_angles(phi, n)
        else:
            R[t] = corr.equicorr_matrix(float(phi[0]), n)
    return h, d, R
