"""Pure-NumPy filtering engine.

Composes the statespace and scoredriver operations step by step, in the
order: assemble -> kalman_step -> derivative_step -> score_fisher ->
scaled_score -> gas_update. This is the reference implementation the
compiled kernel is tested against, and the fallback backend when the
extension is unavailable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import scoredriver as sd
from . import statespace as ss
from .errors import DivergedFilter, NonInvertibleF, ParameterOverflow
from .panel import ObservationPanel


@dataclass
class FilterResult:
    """Output of one filtering pass."""

    loglik: float
    f_path: np.ndarray          # (T, k), f_path[t] is the f used at step t
    loglik_path: np.ndarray     # (T,) per-step increments, 0 where no data
    n_obs_steps: int
    scores: list = field(default_factory=list)        # populated on request
    fishers: list = field(default_factory=list)


def filter_pass_python(panel: ObservationPanel, theta: sd.StaticParams,
                       f1: np.ndarray, a1: np.ndarray, P1: np.ndarray,
                       collect_scores: bool = False) -> FilterResult:
    """Run the score-driven filter over a panel with the NumPy backend.

    Raises
    ------
    DivergedFilter
        If a GAS update pushes a log-variance outside +/-50.
    NonInvertibleF
        If an innovation covariance fails the 1e12 condition cap.
    """
    n, T = panel.n, panel.T
    k = theta.k
    param = theta.parameterization

    f = np.asarray(f1, dtype=float).copy()
    a = np.asarray(a1, dtype=float).copy()
    P = np.asarray(P1, dtype=float).copy()
    a_dot = np.zeros((n, k))
    P_dot = np.zeros((n * n, k))

    f_path = np.empty((T, k))
    ll_path = np.zeros(T)
    loglik = 0.0
    n_obs_steps = 0
    res = FilterResult(0.0, f_path, ll_path, 0)

    for t in range(T):
        f_path[t] = f
        snap, H_dot, Q_dot = sd.assemble(f, n, param)
        mask = panel.mask[t]

        if not mask.any():
            a, P = ss.kalman_step_all_missing(a, P, snap.Q)
            a_dot, P_dot = ss.derivative_step_all_missing(a_dot, P_dot, Q_dot)
            s = np.zeros(k)
            if collect_scores:
                res.scores.append(np.zeros(k))
                res.fishers.append(np.zeros((k, k)))
        else:
            try:
                step = ss.kalman_step(panel.prices[t], mask, a, P, snap.H, snap.Q)
            except NonInvertibleF as exc:
                raise NonInvertibleF(t=t, cond=exc.cond) from None
            der = ss.derivative_step(step, mask, P, a_dot, P_dot, H_dot, Q_dot)
            J = sd.link_jacobian(f, n, param)
            nabla, fisher = sd.score_fisher(step.v, step.F_inv, der.v_dot,
                                            der.F_dot, J)
            s = sd.scaled_score(nabla, fisher)
            loglik += step.loglik
            ll_path[t] = step.loglik
            n_obs_steps += 1
            a, P = step.a_next, step.P_next
            a_dot, P_dot = der.a_dot_next, der.P_dot_next
            if collect_scores:
                res.scores.append(nabla)
                res.fishers.append(fisher)

        try:
            f = sd.gas_update(theta, f, s)
        except ParameterOverflow:
            raise DivergedFilter(t=t) from None

    res.loglik = float(loglik)
    res.n_obs_steps = n_obs_steps
    return res
