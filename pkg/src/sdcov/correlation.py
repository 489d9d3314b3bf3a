"""Correlation matrix parameterizations and their Jacobians.

Two parameterizations map an unconstrained vector to a valid correlation
matrix: hyperspherical coordinates (angles of an upper-triangular Cholesky
factor, n(n-1)/2 parameters) and equicorrelation (a single parameter through
a scaled tanh). Both expose analytic derivatives of R with respect to the
parameters, used by the score recursions.

vec() is column-major everywhere in this module.
"""

from __future__ import annotations

import numpy as np

from .errors import SingularCovariance

ANGLE_EPS = 1e-8


def n_angles(n: int) -> int:
    """Number of hyperspherical angles for an n x n correlation matrix."""
    return n * (n - 1) // 2


def corr_pairs(n: int) -> list[tuple[int, int]]:
    """Canonical (i, j) pair order: (0,1), (0,2), (1,2), (0,3), ...

    Column-major over the upper triangle, matching the angle layout and the
    R_ij column order in results files.
    """
    return [(i, j) for j in range(1, n) for i in range(j)]


def clamp_angles(theta: np.ndarray) -> np.ndarray:
    """Clamp angles to the open interval [1e-8, pi - 1e-8]."""
    return np.clip(theta, ANGLE_EPS, np.pi - ANGLE_EPS)


def hyperspherical_cholesky(theta: np.ndarray, n: int) -> np.ndarray:
    """Upper-triangular Cholesky factor Z with R = Z'Z from angles.

    Column j of Z (0-indexed) is a point on the unit j-sphere: entry i carries
    cos(theta_ij) times the product of sines of the preceding angles in that
    column, and the diagonal entry is the full sine product. Column 0 is e_1.

    Parameters
    ----------
    theta : ndarray, shape (n*(n-1)/2,)
        Angles in canonical pair order; clamped to [1e-8, pi - 1e-8].
    n : int
        Matrix dimension.

    Returns
    -------
    ndarray, shape (n, n)
        Upper-triangular factor with unit-norm columns.
    """
    theta = clamp_angles(np.asarray(theta, dtype=float))
    if theta.shape != (n_angles(n),):
        raise ValueError(f"expected {n_angles(n)} angles for n={n}, got {theta.shape}")
    Z = np.zeros((n, n))
    Z[0, 0] = 1.0
    pos = 0
    for j in range(1, n):
        prod = 1.0
        for i in range(j):
            a = theta[pos + i]
            Z[i, j] = np.cos(a) * prod
            prod *= np.sin(a)
        Z[j, j] = prod
        pos += j
    return Z


def corr_from_angles(theta: np.ndarray, n: int) -> np.ndarray:
    """Correlation matrix R = Z'Z from hyperspherical angles.

    Unit diagonal and positive definiteness hold by construction for any
    input (angles are clamped to the open interval).
    """
    Z = hyperspherical_cholesky(theta, n)
    R = Z.T @ Z
    # exact unit diagonal despite rounding in the sine products
    d = np.sqrt(np.diag(R))
    R = R / np.outer(d, d)
    np.fill_diagonal(R, 1.0)
    return R


def dZ_dtheta(theta: np.ndarray, n: int) -> np.ndarray:
    """Jacobian of vec(Z) with respect to each angle.

    The angle for pair (l, j) only moves column j of Z:

    - rows i < l are untouched,
    - row l loses its cosine: -sin(theta_lj) * prod_{k<l} sin(theta_kj),
    - rows l < i <= j swap the sine at position l for its cosine, which
      multiplies the entry by cos(theta_lj)/sin(theta_lj).

    Returns
    -------
    ndarray, shape (n*n, q)
        Column m is the column-major vec of dZ/dtheta_m.
    """
    theta = clamp_angles(np.asarray(theta, dtype=float))
    q = n_angles(n)
    out = np.zeros((n * n, q))
    pos = 0
    for j in range(1, n):
        ang = theta[pos:pos + j]
        s, c = np.sin(ang), np.cos(ang)
        # prefix[i] = prod_{k<i} sin(theta_kj), prefix[j] used for Z_jj
        prefix = np.concatenate(([1.0], np.cumprod(s)))
        for l in range(j):
            col = np.zeros(n)
            col[l] = -s[l] * prefix[l]
            for i in range(l + 1, j):
                col[i] = c[i] * (prefix[i] / s[l]) * c[l]
            col[j] = (prefix[j] / s[l]) * c[l]
            dZ = np.zeros((n, n))
            dZ[:, j] = col
            out[:, pos + l] = dZ.ravel(order="F")
        pos += j
    return out


def dR_hyperspherical(theta: np.ndarray, n: int) -> np.ndarray:
    """Jacobian of vec(R) = vec(Z'Z) with respect to the angles.

    Product rule per angle: dR_m = dZ_m' Z + Z' dZ_m.

    Returns
    -------
    ndarray, shape (n*n, q)
    """
    Z = hyperspherical_cholesky(theta, n)
    dZ = dZ_dtheta(theta, n)
    q = dZ.shape[1]
    out = np.empty((n * n, q))
    for m in range(q):
        dZm = dZ[:, m].reshape(n, n, order="F")
        dRm = dZm.T @ Z
        dRm = dRm + dRm.T
        out[:, m] = dRm.ravel(order="F")
    return out


def angles_from_corr(R: np.ndarray) -> np.ndarray:
    """Invert the hyperspherical map: angles whose corr_from_angles is R.

    Uses the upper Cholesky factor of R and peels the angles column by
    column. Raises SingularCovariance if R is not positive definite.
    """
    R = np.asarray(R, dtype=float)
    n = R.shape[0]
    try:
        U = np.linalg.cholesky(R).T
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance("correlation matrix not positive definite") from exc
    theta = np.empty(n_angles(n))
    pos = 0
    for j in range(1, n):
        prod = 1.0
        for i in range(j):
            c = U[i, j] / prod if prod > 0 else 0.0
            a = float(np.arccos(np.clip(c, -1.0, 1.0)))
            a = min(max(a, ANGLE_EPS), np.pi - ANGLE_EPS)
            theta[pos + i] = a
            prod *= np.sin(a)
        pos += j
    return theta


def equicorr_rho(theta: float, n: int) -> float:
    """Equicorrelation level from the unconstrained parameter.

    rho = ((1 - 1/(n-1)) + (1 + 1/(n-1)) * tanh(theta)) / 2, which maps the
    real line onto the open positive-definiteness interval (-1/(n-1), 1).
    """
    if n < 2:
        raise ValueError("equicorrelation needs n >= 2")
    lo = 1.0 / (n - 1)
    rho = 0.5 * ((1.0 - lo) + (1.0 + lo) * np.tanh(theta))
    # tanh saturates in doubles beyond |theta| ~ 19; keep the interval open
    return float(np.clip(rho, -lo + 1e-10, 1.0 - 1e-10))


def equicorr_matrix(theta: float, n: int) -> np.ndarray:
    """R = (1 - rho) I + rho J for the implied equicorrelation rho."""
    rho = equicorr_rho(theta, n)
    R = np.full((n, n), rho)
    np.fill_diagonal(R, 1.0)
    return R


def equicorr_derivative(theta: float, n: int) -> tuple[float, np.ndarray]:
    """(d rho / d theta, d vec(R) / d theta) for the equicorrelation map.

    The matrix derivative is rho_dot * (J - I); padding to the full state
    dimension is the score driver's job.
    """
    if n < 2:
        raise ValueError("equicorrelation needs n >= 2")
    lo = 1.0 / (n - 1)
    # 1/cosh^2 via exp to avoid cosh overflow at saturated theta
    at = min(abs(float(theta)), 350.0)
    rho_dot = 2.0 * (1.0 + lo) / (np.exp(at) + np.exp(-at)) ** 2
    dR = np.full((n, n), rho_dot)
    np.fill_diagonal(dR, 0.0)
    return float(rho_dot), dR.ravel(order="F")[:, None]


def equicorr_theta_from_rho(rho: float, n: int) -> float:
    """Invert equicorr_rho, clipping to the open interval."""
    lo = 1.0 / (n - 1)
    x = (2.0 * rho - (1.0 - lo)) / (1.0 + lo)
    x = np.clip(x, -1.0 + 1e-12, 1.0 - 1e-12)
    return float(np.arctanh(x))
