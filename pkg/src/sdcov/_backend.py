"""Backend selection: compiled kernel when available, NumPy otherwise.

The environment variable SDCOV_BACKEND ("cython" or "python") overrides the
default choice. Both backends implement the same recursion; equivalence is
pinned by tests/test_backends.py.
"""

from __future__ import annotations

import os

import numpy as np

from . import scoredriver as sd
from ._engine import FilterResult, filter_pass_python
from .errors import DivergedFilter, NonInvertibleF
from .panel import ObservationPanel

try:
    from . import _kernels
    HAVE_KERNELS = hasattr(_kernels, "ll_filter")
except ImportError:  # pragma: no cover - depends on build environment
    _kernels = None
    HAVE_KERNELS = False

_PARAM_TAG = {sd.PARAM_HYPER: 0, sd.PARAM_EQUI: 1}


def default_backend() -> str:
    env = os.environ.get("SDCOV_BACKEND", "").strip().lower()
    if env in ("python", "cython"):
        if env == "cython" and not HAVE_KERNELS:
            raise ImportError("SDCOV_BACKEND=cython but the compiled kernel is missing")
        return env
    return "cython" if HAVE_KERNELS else "python"


def filter_pass_cython(panel: ObservationPanel, theta: sd.StaticParams,
                       f1: np.ndarray, a1: np.ndarray, P1: np.ndarray) -> FilterResult:
    T, n = panel.T, panel.n
    k = theta.k
    y = np.ascontiguousarray(np.nan_to_num(panel.prices, nan=0.0))
    mask = np.ascontiguousarray(panel.mask, dtype=np.uint8)
    f_path = np.empty((T, k))
    ll_path = np.zeros(T)
    status, loglik, t_fail, n_obs = _kernels.ll_filter(
        y, mask, _PARAM_TAG[theta.parameterization], n,
        np.ascontiguousarray(theta.omega), np.ascontiguousarray(theta.A),
        np.ascontiguousarray(theta.B),
        np.ascontiguousarray(f1, dtype=float), np.ascontiguousarray(a1, dtype=float),
        np.ascontiguousarray(P1, dtype=float), f_path, ll_path)
    if status == 1:
        raise DivergedFilter(t=t_fail)
    if status == 2:
        raise NonInvertibleF(t=t_fail)
    return FilterResult(loglik=float(loglik), f_path=f_path, loglik_path=ll_path,
                        n_obs_steps=int(n_obs))


def run_filter(panel: ObservationPanel, theta: sd.StaticParams, f1: np.ndarray,
               a1: np.ndarray, P1: np.ndarray, backend: str | None = None,
               collect_scores: bool = False) -> FilterResult:
    if backend is None:
        backend = default_backend()
    if collect_scores or backend == "python":
        return filter_pass_python(panel, theta, f1, a1, P1, collect_scores)
    return filter_pass_cython(panel, theta, f1, a1, P1)
