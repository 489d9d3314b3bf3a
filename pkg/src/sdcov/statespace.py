"""Kalman recursions for the local-level model with missing observations.

The observation at step t is the subvector of Y_t picked out by a selection
matrix Gamma_t; a fully missing step degenerates to a pure prediction. The
derivative recursions propagate the sensitivities of the filter state with
respect to the time-varying parameter vector, with vec() column-major and
columns of the *_dot arrays indexed by parameter.

This module is the plain-NumPy reference; the compiled kernel reproduces it
block-wise without materializing Kronecker products.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonInvertibleF

COND_CAP = 1e12
LOG2PI = float(np.log(2.0 * np.pi))


def selection_matrix(mask: np.ndarray) -> np.ndarray:
    """Selection matrix Gamma with one row per observed entry.

    Gamma @ y picks the observed subvector in index order; Gamma @ Gamma.T
    is the identity of size n_t.
    """
    mask = np.asarray(mask, dtype=bool)
    idx = np.flatnonzero(mask)
    G = np.zeros((idx.size, mask.size))
    G[np.arange(idx.size), idx] = 1.0
    return G


def commutation_matrix(m: int, n: int) -> np.ndarray:
    """Commutation matrix C with C @ vec(A) = vec(A.T) for A of shape (m, n)."""
    C = np.zeros((m * n, m * n))
    for i in range(m):
        for j in range(n):
            C[j + i * n, i + j * m] = 1.0
    return C


@dataclass
class KalmanStep:
    """One filtering update: innovation pieces and the advanced state."""

    v: np.ndarray          # (n_t,) innovation
    F: np.ndarray          # (n_t, n_t) innovation covariance
    F_inv: np.ndarray      # (n_t, n_t)
    K: np.ndarray          # (n, n_t) gain
    a_next: np.ndarray     # (n,)
    P_next: np.ndarray     # (n, n)
    loglik: float          # Gaussian log-likelihood increment


def kalman_step(y: np.ndarray, mask: np.ndarray, a: np.ndarray, P: np.ndarray,
                H: np.ndarray, Q: np.ndarray) -> KalmanStep:
    """Single update of the local-level filter on the observed subvector.

    v = Gamma (y - a),  F = Gamma (P + H) Gamma',  K = P Gamma' F^{-1},
    a+ = a + K v,       P+ = P (I - K Gamma)' + Q  (symmetrized).

    Raises
    ------
    NonInvertibleF
        If F is singular or its condition number exceeds 1e12.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("kalman_step requires at least one observed entry")
    idx = np.flatnonzero(mask)
    n_t = idx.size

    v = y[idx] - a[idx]
    F = (P + H)[np.ix_(idx, idx)]
    if not np.isfinite(F).all():
        raise NonInvertibleF()
    w = np.linalg.eigvalsh(F)
    if w[0] <= 0 or w[-1] / w[0] > COND_CAP:
        raise NonInvertibleF(cond=np.inf if w[0] <= 0 else w[-1] / w[0])
    F_inv = np.linalg.inv(F)

    K = P[:, idx] @ F_inv
    a_next = a + K @ v
    P_next = P - P[:, idx] @ K.T + Q
    P_next = 0.5 * (P_next + P_next.T)

    _, logdet = np.linalg.slogdet(F)
    loglik = -0.5 * n_t * LOG2PI - 0.5 * (logdet + v @ F_inv @ v)
    return KalmanStep(v, F, F_inv, K, a_next, P_next, float(loglik))


def kalman_step_all_missing(a: np.ndarray, P: np.ndarray, Q: np.ndarray
                            ) -> tuple[np.ndarray, np.ndarray]:
    """Prediction-only step: a+ = a, P+ = P + Q."""
    return a.copy(), 0.5 * (P + P.T) + Q


@dataclass
class DerivativeStep:
    """Sensitivities of the filter quantities, one column per parameter."""

    v_dot: np.ndarray       # (n_t, k)
    F_dot: np.ndarray       # (n_t*n_t, k)
    K_dot: np.ndarray       # (n*n_t, k)
    a_dot_next: np.ndarray  # (n, k)
    P_dot_next: np.ndarray  # (n*n, k)


def derivative_step(step: KalmanStep, mask: np.ndarray, P: np.ndarray,
                    a_dot: np.ndarray, P_dot: np.ndarray,
                    H_dot: np.ndarray, Q_dot: np.ndarray) -> DerivativeStep:
    """Advance the derivative recursions alongside one kalman_step.

    With Gamma the selection matrix of ``mask`` and all vecs column-major:

    v_dot = -Gamma a_dot
    F_dot = (Gamma kron Gamma)(P_dot + H_dot)
    K_dot = (F^{-1} Gamma kron I) P_dot - (F^{-1} kron K) F_dot
    a_dot+ = a_dot + (v' kron I) K_dot + K v_dot
    P_dot+ = P_dot - (K Gamma kron I) P_dot - (I kron P Gamma') C K_dot + Q_dot

    ``P`` and the entries of ``step`` are the pre-update quantities of the
    same time step. Columns of P_dot+ are symmetrized.
    """
    mask = np.asarray(mask, dtype=bool)
    n = mask.size
    G = selection_matrix(mask)
    F_inv, K, v = step.F_inv, step.K, step.v

    v_dot = -G @ a_dot
    F_dot = np.kron(G, G) @ (P_dot + H_dot)
    K_dot = np.kron(F_inv @ G, np.eye(n)) @ P_dot - np.kron(F_inv, K) @ F_dot
    a_dot_next = a_dot + np.kron(v, np.eye(n)) @ K_dot + K @ v_dot

    C = commutation_matrix(n, int(mask.sum()))
    P_dot_next = (P_dot
                  - np.kron(K @ G, np.eye(n)) @ P_dot
                  - np.kron(np.eye(n), P @ G.T) @ (C @ K_dot)
                  + Q_dot)
    k = P_dot.shape[1]
    sym = P_dot_next.reshape(n, n, k, order="F")
    P_dot_next = (0.5 * (sym + sym.transpose(1, 0, 2))).reshape(n * n, k, order="F")
    return DerivativeStep(v_dot, F_dot, K_dot, a_dot_next, P_dot_next)


def derivative_step_all_missing(a_dot: np.ndarray, P_dot: np.ndarray,
                                Q_dot: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Derivative counterpart of the prediction-only step."""
    return a_dot.copy(), P_dot + Q_dot
