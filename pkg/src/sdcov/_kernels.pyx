# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# cython: language_level=3
"""Compiled kernels for the score-driven filter and benchmark recursions.

Implements the same recursions as the pure-NumPy modules (statespace,
scoredriver, _engine) without materializing Kronecker products. Parameter
derivatives are carried as stacks of small matrices and advanced with three
large GEMMs per step; the scaled score is solved through a Gram factor of
the Fisher matrix, switching between a dual route (when the per-step
innovation dimension is small) and a primal Cholesky/eigendecomposition.

Layout conventions
------------------
Per-parameter derivative stacks are kept in buffers that read as horizontal
Fortran concatenations: a stack with blocks of shape (r, c) stores block j
in the slab [j*r*c, (j+1)*r*c) in column-major order. Symmetric blocks
(dP_j, dQ_j, dF_j) are orientation free, so the same buffers double as
C-order stacks. BLAS and LAPACK calls follow Fortran semantics throughout;
a C-order (rows, cols) buffer passed to them is the transposed Fortran
matrix (cols, rows).

Key identities that keep the step GEMM-only:

    K dF_j stacked            -> one GEMM against the dF stack,
    dK_j v = TMP2_j' (F^-1 v) -> reuses the solved innovation, no solve,
    P Gamma' dK_j' = K TMP2_j -> one GEMM against the TMP2 stack,

with TMP2_j = dP_j[idx, :] - (K dF_j)'.
"""

import numpy as np

from libc.math cimport exp, log, log1p, sqrt, sin, cos, tanh, fabs, lgamma, M_PI
from libc.string cimport memcpy, memset

from scipy.linalg.cython_blas cimport dgemm, dtrsm, dsyrk
from scipy.linalg.cython_lapack cimport dpotrf, dpotrs, dpocon, dsyevd, dtrtrs

cdef double LOG2PI = 1.8378770664093453
cdef double INV_SQRT2 = 0.7071067811865476
cdef double LOG_VAR_CAP = 50.0
cdef double SCORE_DAMP_REL = 1e-3  # keep in sync with scoredriver.SCORE_DAMP_REL
cdef double F_RCOND_MIN = 1e-12      # mirrors the 1e12 condition cap
cdef double EXP_MAX = 709.0
cdef double ANGLE_EPS = 1e-8

cdef char *C_N = 'N'
cdef char *C_T = 'T'
cdef char *C_L = 'L'
cdef char *C_V = 'V'

cdef int STATUS_OK = 0
cdef int STATUS_DIVERGED = 1
cdef int STATUS_NONINVERTIBLE = 2


# ---------------------------------------------------------------------------
# covariance assembly
# ---------------------------------------------------------------------------

cdef void _corr_hyper(double *phi, int n, double *Z, double *R) noexcept nogil:
    """R = Z'Z from clamped hyperspherical angles, unit diagonal enforced."""
    cdef int i, j, l, pos
    cdef double a, prod, acc, di, dj
    memset(Z, 0, n * n * sizeof(double))
    Z[0] = 1.0
    pos = 0
    for j in range(1, n):
        prod = 1.0
        for i in range(j):
            a = phi[pos + i]
            if a < ANGLE_EPS:
                a = ANGLE_EPS
            elif a > M_PI - ANGLE_EPS:
                a = M_PI - ANGLE_EPS
            Z[i * n + j] = cos(a) * prod
            prod *= sin(a)
        Z[j * n + j] = prod
        pos += j
    # upper-triangular Z: (Z'Z)_ij sums rows <= min(i, j)
    for i in range(n):
        for j in range(i, n):
            acc = 0.0
            for l in range(i + 1):
                acc += Z[l * n + i] * Z[l * n + j]
            R[i * n + j] = acc
            R[j * n + i] = acc
    # exact unit diagonal despite rounding in the sine products
    for i in range(n):
        R[i * n + i] = sqrt(R[i * n + i])
    for i in range(n):
        di = R[i * n + i]
        for j in range(i + 1, n):
            dj = R[j * n + j]
            a = R[i * n + j] / (di * dj)
            R[i * n + j] = a
            R[j * n + i] = a
    for i in range(n):
        R[i * n + i] = 1.0


cdef double _equicorr_rho(double theta, int n) noexcept nogil:
    cdef double lo = 1.0 / (n - 1)
    cdef double rho = 0.5 * ((1.0 - lo) + (1.0 + lo) * tanh(theta))
    if rho < -lo + 1e-10:
        rho = -lo + 1e-10
    elif rho > 1.0 - 1e-10:
        rho = 1.0 - 1e-10
    return rho


cdef double _equicorr_rho_dot(double theta, int n) noexcept nogil:
    cdef double lo = 1.0 / (n - 1)
    cdef double at = fabs(theta)
    if at > 350.0:
        at = 350.0
    cdef double den = exp(at) + exp(-at)
    return 2.0 * (1.0 + lo) / (den * den)


cdef int _assemble_cov(double *f, int n, int q, int tag, bint with_noise,
                       double *h, double *d, double *R, double *Q,
                       double *dq, int k, double *Z, double *uvec
                       ) noexcept nogil:
    """Fill h, d, R, Q and the dQ/df~ slab stack (k slabs of n*n).

    ``f`` has layout [log h (n), log d^2 (n), phi (q)] when with_noise, else
    [log d^2 (n), phi (q)]. Slabs for the noise block (if any) stay zero;
    the d^2 block occupies slabs off_d..off_d+n, the correlation block the
    last q slabs. Derivatives are w.r.t. the auxiliary coordinates (d^2
    itself, phi). Returns nonzero if an exponential would overflow.
    """
    cdef int i, c, j, l, m, pos, jcol, off_d, off_r
    cdef double val, rho, rho_dot, a, prod, cl, sl, prefix_i, dz
    cdef double *dzcol = uvec + n  # second half of the 2n scratch

    off_d = n if with_noise else 0
    off_r = off_d + n

    if with_noise:
        for i in range(n):
            if f[i] > EXP_MAX or f[n + i] > EXP_MAX:
                return 1
            h[i] = exp(f[i])
            d[i] = exp(0.5 * f[n + i])
    else:
        for i in range(n):
            if f[i] > EXP_MAX:
                return 1
            h[i] = 0.0
            d[i] = exp(0.5 * f[i])

    memset(dq, 0, (<size_t>k) * n * n * sizeof(double))

    if tag == 0:
        _corr_hyper(f + off_r, n, Z, R)
    else:
        rho = _equicorr_rho(f[off_r], n)
        for i in range(n):
            for c in range(n):
                R[i * n + c] = rho
            R[i * n + i] = 1.0

    for i in range(n):
        for c in range(n):
            Q[i * n + c] = d[i] * R[i * n + c] * d[c]

    # d^2 block: dQ/d d_i^2 = (e_i (R D)_i. + (D R)_.i e_i') / (2 d_i)
    cdef double *slab
    for i in range(n):
        slab = dq + (<size_t>(off_d + i)) * n * n
        for c in range(n):
            val = d[c] * R[c * n + i] / (2.0 * d[i])
            slab[i * n + c] += val
            slab[c * n + i] += val

    if tag == 0:
        # angle m for pair (l, jcol) moves only column jcol of Z; dR_m has
        # support on row/column jcol: dR_m = e_j u' + u e_j', u = Z' dzcol
        pos = 0
        for jcol in range(1, n):
            for l in range(jcol):
                a = f[off_r + pos + l]
                if a < ANGLE_EPS:
                    a = ANGLE_EPS
                elif a > M_PI - ANGLE_EPS:
                    a = M_PI - ANGLE_EPS
                cl = cos(a)
                sl = sin(a)
                memset(dzcol, 0, n * sizeof(double))
                # prefix_i = prod_{k<i} sin(theta_k): rebuild incrementally
                prod = 1.0
                for i in range(l):
                    val = f[off_r + pos + i]
                    if val < ANGLE_EPS:
                        val = ANGLE_EPS
                    elif val > M_PI - ANGLE_EPS:
                        val = M_PI - ANGLE_EPS
                    prod *= sin(val)
                dzcol[l] = -sl * prod          # prefix_l
                prefix_i = prod * sl
                for i in range(l + 1, jcol):
                    val = f[off_r + pos + i]
                    if val < ANGLE_EPS:
                        val = ANGLE_EPS
                    elif val > M_PI - ANGLE_EPS:
                        val = M_PI - ANGLE_EPS
                    dzcol[i] = cos(val) * (prefix_i / sl) * cl
                    prefix_i *= sin(val)
                dzcol[jcol] = (prefix_i / sl) * cl
                # u = Z' dzcol (Z upper triangular: rows i <= col)
                for c in range(n):
                    val = 0.0
                    m = c if c < jcol else jcol
                    for i in range(m + 1):
                        val += Z[i * n + c] * dzcol[i]
                    uvec[c] = val
                slab = dq + (<size_t>(off_r + pos + l)) * n * n
                for c in range(n):
                    val = d[jcol] * uvec[c] * d[c]
                    slab[jcol * n + c] += val
                    slab[c * n + jcol] += val
            pos += jcol
    else:
        rho_dot = _equicorr_rho_dot(f[off_r], n)
        slab = dq + (<size_t>off_r) * n * n
        for i in range(n):
            for c in range(n):
                if i != c:
                    slab[i * n + c] = d[i] * rho_dot * d[c]
    return 0


def assemble_cov(double[::1] f, int n, int tag, bint with_noise):
    """Covariance assembly exposed for parity tests against the NumPy path.

    Returns (h, d, R, Q, dq) where dq has shape (k, n, n), one slab per
    state coordinate, derivatives taken w.r.t. the auxiliary coordinates
    (d^2 itself, phi); noise slabs stay zero.
    """
    cdef int k = f.shape[0]
    cdef int q = k - (2 * n if with_noise else n)
    if q < 0:
        raise ValueError("state vector too short for this layout")
    h_arr = np.zeros(n)
    d_arr = np.zeros(n)
    R_arr = np.zeros((n, n))
    Q_arr = np.zeros((n, n))
    Z_arr = np.zeros((n, n))
    u_arr = np.zeros(2 * n)
    dq_arr = np.zeros((k, n, n))
    cdef double[::1] h = h_arr, d = d_arr, uvec = u_arr
    cdef double[:, ::1] R = R_arr, Q = Q_arr, Z = Z_arr
    cdef double[:, :, ::1] dq = dq_arr
    if _assemble_cov(&f[0], n, q, tag, with_noise, &h[0], &d[0], &R[0, 0],
                     &Q[0, 0], &dq[0, 0, 0], k, &Z[0, 0], &uvec[0]):
        raise OverflowError("state exponential overflow in assembly")
    return h_arr, d_arr, R_arr, Q_arr, dq_arr


# ---------------------------------------------------------------------------
# scaled score from the Gram factor of the Fisher matrix
# ---------------------------------------------------------------------------

cdef int _scaled_from_gram(int k, int mc, double *ghat, double *u,
                           double *grad, double *s, double *bmat,
                           double *ew, double *tvec, double *work, int lwork,
                           int *iwork, int liwork, double *pwork, int *piwork
                           ) noexcept nogil:
    """s = Fisher^+ grad with Fisher = Ghat Ghat', grad = Ghat u.

    Eigenvalues w are inverted with the damped weight w / (w^2 + lam^2),
    lam = SCORE_DAMP_REL * w_max, matching scoredriver.scaled_score. Ghat is
    C-order (k, mc) (= Fortran (mc, k), i.e. Ghat'). Dual route when mc < k:
    for Fisher eigenvalues sigma^2 the damped primal weight maps to the same
    w / (w^2 + lam^2) factor on the eigenvalues w = sigma^2 of Ghat'Ghat.
    Returns 0, or 1 on an eigensolver failure.
    """
    cdef int j, i, info
    cdef double acc, wmax, lam, alpha = 1.0, beta = 0.0
    cdef double *row

    for j in range(k):
        row = ghat + (<size_t>j) * mc
        acc = 0.0
        for i in range(mc):
            acc += row[i] * u[i]
        grad[j] = acc

    if mc < k:
        # B = Ghat'Ghat (mc x mc); Fortran view of ghat is already Ghat'
        dsyrk(C_L, C_N, &mc, &k, &alpha, ghat, &mc, &beta, bmat, &mc)
        dsyevd(C_V, C_L, &mc, bmat, &mc, ew, work, &lwork, iwork, &liwork, &info)
        if info != 0:
            return 1
        wmax = ew[mc - 1]
        if wmax <= 0.0:
            for j in range(k):
                s[j] = 0.0
            return 0
        lam = SCORE_DAMP_REL * wmax
        # tvec = diag(inv) V' u
        for i in range(mc):
            acc = 0.0
            for j in range(mc):
                acc += bmat[i * mc + j] * u[j]     # column i of V
            tvec[i] = acc * ew[i] / (ew[i] * ew[i] + lam * lam)
        # u <- V tvec (reuse grad path: s = Ghat (V tvec))
        for j in range(mc):
            acc = 0.0
            for i in range(mc):
                acc += bmat[i * mc + j] * tvec[i]
            u[j] = acc
        for j in range(k):
            row = ghat + (<size_t>j) * mc
            acc = 0.0
            for i in range(mc):
                acc += row[i] * u[i]
            s[j] = acc
        return 0

    # primal: Fisher = Ghat Ghat' in the lower triangle (Fortran), then the
    # same damped pseudo-inverse as the reference path. The Fisher matrix is
    # rank deficient in realistic configurations, so a Cholesky shortcut
    # would change the damping semantics.
    dsyrk(C_L, C_T, &k, &mc, &alpha, ghat, &mc, &beta, bmat, &k)
    dsyevd(C_V, C_L, &k, bmat, &k, ew, work, &lwork, iwork, &liwork, &info)
    if info != 0:
        return 1
    wmax = ew[k - 1]
    if wmax <= 0.0:
        for j in range(k):
            s[j] = 0.0
        return 0
    lam = SCORE_DAMP_REL * wmax
    for i in range(k):
        acc = 0.0
        for j in range(k):
            acc += bmat[i * k + j] * grad[j]
        tvec[i] = acc * ew[i] / (ew[i] * ew[i] + lam * lam)
    for j in range(k):
        acc = 0.0
        for i in range(k):
            acc += bmat[i * k + j] * tvec[i]
        s[j] = acc
    return 0


# ---------------------------------------------------------------------------
# local-level score-driven filter / simulator core
# ---------------------------------------------------------------------------

cdef int _ll_core(int T, int n, int q, int k, int tag, bint simulate,
                  double *y, unsigned char *mask,
                  double *omega, double *Avec, double *Bvec,
                  double *xi, double *zeta, double *y_out, double *x_out,
                  double *f, double *a, double *P,
                  double *f_path, double *ll_path,
                  double *loglik_out, int *t_fail, int *n_obs,
                  # workspaces
                  double *h, double *d, double *R, double *Q, double *Z,
                  double *uvec, double *dq, double *dp, double *da,
                  double *dv, double *dpr2, double *tmp2, double *tmp2f,
                  double *kdf, double *kdft, double *kdfk, double *sym2,
                  double *df, double *ghat, double *ubuf, double *grad,
                  double *svec, double *bmat, double *ew, double *tvec,
                  double *work, int lwork, int *iwork, int liwork,
                  double *pwork, int *piwork,
                  double *lf, double *v, double *w, double *b,
                  double *kmat, double *ptil, double *xstate, int *idx
                  ) noexcept nogil:
    cdef int t, i, c, j, r, m, info, pos
    cdef double val, acc, ll_inc, anorm, rcond, alpha, beta_, fn
    cdef double loglik = 0.0
    cdef int nobs = 0
    cdef int mc, knm
    cdef size_t sz
    cdef double *slab
    cdef double *row
    cdef bint any_bad

    for i in range(2 * n):
        if f[i] > EXP_MAX:
            t_fail[0] = 0
            return STATUS_DIVERGED

    memset(da, 0, (<size_t>k) * n * sizeof(double))
    memset(dp, 0, (<size_t>k) * n * n * sizeof(double))

    for t in range(T):
        memcpy(f_path + (<size_t>t) * k, f, (<size_t>k) * sizeof(double))
        if _assemble_cov(f, n, q, tag, True, h, d, R, Q, dq, k, Z, uvec):
            t_fail[0] = t
            return STATUS_DIVERGED

        if simulate:
            # y_t = x_t + sqrt(h) xi_t, fully observed
            for i in range(n):
                val = xstate[i] + sqrt(h[i]) * xi[(<size_t>t) * n + i]
                y_out[(<size_t>t) * n + i] = val
                x_out[(<size_t>t) * n + i] = xstate[i]
                v[i] = val  # stash the row; idx built below
            m = n
            for i in range(n):
                idx[i] = i
        else:
            m = 0
            for i in range(n):
                if mask[(<size_t>t) * n + i]:
                    idx[m] = i
                    m += 1

        if m == 0:
            # prediction only: a unchanged, P = sym(P) + Q, dP += dQ
            for i in range(n):
                for c in range(i, n):
                    val = 0.5 * (P[i * n + c] + P[c * n + i]) + Q[i * n + c]
                    P[i * n + c] = val
                    P[c * n + i] = val
            sz = (<size_t>k) * n * n
            for j in range(<int>sz):
                dp[j] += dq[j]
            ll_path[t] = 0.0
            for j in range(k):
                svec[j] = 0.0
        else:
            # innovation v and its covariance F on the observed subvector
            if simulate:
                for c in range(m):
                    v[c] = v[c] - a[c]
            else:
                for c in range(m):
                    v[c] = y[(<size_t>t) * n + idx[c]] - a[idx[c]]
            for r in range(m):
                for c in range(m):
                    val = P[idx[r] * n + idx[c]]
                    if r == c:
                        val += h[idx[r]]
                    lf[r + c * m] = val
            anorm = 0.0
            for c in range(m):
                acc = 0.0
                for r in range(m):
                    acc += fabs(lf[r + c * m])
                if acc > anorm:
                    anorm = acc
            if anorm != anorm or anorm > 1e300:
                t_fail[0] = t
                return STATUS_NONINVERTIBLE
            dpotrf(C_L, &m, lf, &m, &info)
            if info != 0:
                t_fail[0] = t
                return STATUS_NONINVERTIBLE
            dpocon(C_L, &m, lf, &m, &anorm, &rcond, pwork, piwork, &info)
            if info != 0 or rcond < F_RCOND_MIN:
                t_fail[0] = t
                return STATUS_NONINVERTIBLE

            # w = L^-1 v, b = F^-1 v, log-likelihood increment
            memcpy(w, v, (<size_t>m) * sizeof(double))
            i = 1
            dtrtrs(C_L, C_N, C_N, &m, &i, lf, &m, w, &m, &info)
            memcpy(b, w, (<size_t>m) * sizeof(double))
            dtrtrs(C_L, C_T, C_N, &m, &i, lf, &m, b, &m, &info)
            ll_inc = -0.5 * m * LOG2PI
            for r in range(m):
                ll_inc -= log(lf[r + r * m])
                ll_inc -= 0.5 * w[r] * w[r]
            loglik += ll_inc
            ll_path[t] = ll_inc
            nobs += 1

            # K = P Gamma' F^-1 via one dpotrs on the C-order copy of P~
            for i in range(n):
                for c in range(m):
                    ptil[i * m + c] = P[i * n + idx[c]]
            memcpy(kmat, ptil, (<size_t>n) * m * sizeof(double))
            dpotrs(C_L, &m, &n, lf, &m, kmat, &m, &info)
            if info != 0:
                t_fail[0] = t
                return STATUS_NONINVERTIBLE

            # ---- derivative stacks (all pre-update quantities) ----
            for j in range(k):
                for c in range(m):
                    dv[(<size_t>j) * m + c] = -da[(<size_t>j) * n + idx[c]]
            for j in range(k):
                for r in range(m):
                    memcpy(dpr2 + ((<size_t>j) * m + r) * n,
                           dp + (<size_t>j) * n * n + (<size_t>idx[r]) * n,
                           (<size_t>n) * sizeof(double))
            for j in range(k):
                slab = df + (<size_t>j) * m * m
                row = dpr2 + (<size_t>j) * m * n
                for r in range(m):
                    for c in range(m):
                        slab[r * m + c] = row[r * n + idx[c]]
            for j in range(n):
                if simulate or mask[(<size_t>t) * n + j]:
                    pos = 0
                    for c in range(m):
                        if idx[c] == j:
                            pos = c
                            break
                    df[(<size_t>j) * m * m + pos * m + pos] += 1.0

            # KDF slab j = K dF_j (Fortran (n, m)); one GEMM
            knm = k * m
            alpha = 1.0
            beta_ = 0.0
            dgemm(C_T, C_N, &n, &knm, &m, &alpha, kmat, &m, df, &m,
                  &beta_, kdf, &n)
            # TMP2_j = dP_j[idx,:] - (K dF_j)' ; aligned subtraction
            sz = (<size_t>k) * m * n
            for j in range(<int>sz):
                tmp2[j] = dpr2[j] - kdf[j]

            # a-dot update: da_j += TMP2_j' b + K dv_j (uses pre-solve dv)
            for j in range(k):
                row = tmp2 + (<size_t>j) * m * n
                for r in range(m):
                    val = b[r]
                    for i in range(n):
                        da[(<size_t>j) * n + i] += row[r * n + i] * val
            for j in range(k):
                for i in range(n):
                    acc = 0.0
                    for c in range(m):
                        acc += kmat[i * m + c] * dv[(<size_t>j) * m + c]
                    da[(<size_t>j) * n + i] += acc

            # Fortran-stack transposes for the two P-dot GEMMs
            for j in range(k):
                row = tmp2 + (<size_t>j) * m * n
                slab = tmp2f + (<size_t>j) * m * n
                for r in range(m):
                    for i in range(n):
                        slab[i * m + r] = row[r * n + i]
                row = kdf + (<size_t>j) * m * n
                slab = kdft + (<size_t>j) * m * n
                for r in range(m):
                    for i in range(n):
                        slab[i * m + r] = row[r * n + i]
            i = k * n
            dgemm(C_T, C_N, &n, &i, &m, &alpha, kmat, &m, tmp2f, &m,
                  &beta_, sym2, &n)
            dgemm(C_T, C_N, &n, &i, &m, &alpha, kmat, &m, kdft, &m,
                  &beta_, kdfk, &n)

            # dP+_j = dP_j + dQ_j - 2 sym(SYM2_j) - K dF_j K'
            for j in range(k):
                sz = (<size_t>j) * n * n
                for i in range(n):
                    for c in range(i, n):
                        val = (dp[sz + i * n + c] + dq[sz + i * n + c]
                               - sym2[sz + c * n + i] - sym2[sz + i * n + c]
                               - kdfk[sz + c * n + i])
                        dp[sz + i * n + c] = val
                        dp[sz + c * n + i] = val

            # ---- score and Fisher in auxiliary coords, chained through J ----
            # G1_j = L^-1 dF_j L^-T: two stacked triangular solves with a
            # block transpose in between (dF_j symmetric)
            dtrsm(C_L, C_L, C_N, C_N, &m, &knm, &alpha, lf, &m, df, &m)
            for j in range(k):
                slab = df + (<size_t>j) * m * m
                for r in range(m):
                    for c in range(r + 1, m):
                        val = slab[r * m + c]
                        slab[r * m + c] = slab[c * m + r]
                        slab[c * m + r] = val
            dtrsm(C_L, C_L, C_N, C_N, &m, &knm, &alpha, lf, &m, df, &m)
            # g2_j = L^-1 dv_j: dv is Fortran (m, k)
            dtrsm(C_L, C_L, C_N, C_N, &m, &k, &alpha, lf, &m, dv, &m)

            # Ghat row j = J_j [vec(G1_j)/sqrt2, g2_j]; u completes grad = Ghat u
            mc = m * m + m
            for j in range(k):
                if j < n:
                    val = h[j]
                elif j < 2 * n:
                    val = d[j - n] * d[j - n]
                else:
                    val = 1.0
                row = ghat + (<size_t>j) * mc
                slab = df + (<size_t>j) * m * m
                for r in range(m * m):
                    row[r] = val * slab[r] * INV_SQRT2
                for c in range(m):
                    row[m * m + c] = val * dv[(<size_t>j) * m + c]
            for r in range(m):
                for c in range(m):
                    val = -w[r] * w[c]
                    if r == c:
                        val += 1.0
                    ubuf[r * m + c] = -INV_SQRT2 * val
            for c in range(m):
                ubuf[m * m + c] = -w[c]

            if _scaled_from_gram(k, mc, ghat, ubuf, grad, svec, bmat, ew,
                                 tvec, work, lwork, iwork, liwork,
                                 pwork, piwork):
                t_fail[0] = t
                return STATUS_DIVERGED

            # ---- state update ----
            for i in range(n):
                acc = 0.0
                for c in range(m):
                    acc += kmat[i * m + c] * v[c]
                a[i] += acc
            for i in range(n):
                for c in range(i, n):
                    acc = 0.0
                    for r in range(m):
                        acc += (ptil[i * m + r] * kmat[c * m + r]
                                + ptil[c * m + r] * kmat[i * m + r])
                    val = P[i * n + c] + Q[i * n + c] - 0.5 * acc
                    P[i * n + c] = val
                    P[c * n + i] = val

        if simulate:
            # x_{t+1} = x_t + D M zeta_t with M = V sqrt(max(w, 0)) from the
            # eigendecomposition R = V diag(w) V'. The recursion can visit
            # numerically semidefinite correlation states, where a Cholesky
            # factor does not exist but the degenerate normal is still well
            # defined; M M' = R for any PSD R.
            memcpy(bmat, R, (<size_t>n) * n * sizeof(double))
            dsyevd(C_V, C_L, &n, bmat, &n, ew, work, &lwork, iwork, &liwork,
                   &info)
            if info != 0:
                t_fail[0] = t
                return STATUS_NONINVERTIBLE
            for c in range(n):
                ew[c] = sqrt(ew[c]) if ew[c] > 0.0 else 0.0
            for i in range(n):
                acc = 0.0
                for c in range(n):
                    acc += bmat[i + c * n] * ew[c] * zeta[(<size_t>t) * n + c]
                xstate[i] += d[i] * acc

        # GAS update with the log-variance stability cap
        any_bad = False
        for j in range(k):
            fn = omega[j] + Avec[j] * svec[j] + Bvec[j] * f[j]
            if fn != fn or fabs(fn) > 1e300:
                any_bad = True
            elif j < 2 * n and fabs(fn) > LOG_VAR_CAP:
                any_bad = True
            f[j] = fn
        if any_bad:
            t_fail[0] = t
            return STATUS_DIVERGED

    loglik_out[0] = loglik
    n_obs[0] = nobs
    return STATUS_OK


cdef int _eig_lwork(int k) noexcept nogil:
    return 1 + 6 * k + 2 * k * k


def _ll_workspaces(int T, int n, int k):
    """Allocate the buffers _ll_core needs, sized for the worst step."""
    cdef int lwork = _eig_lwork(k if k > n else n)
    if lwork < 2 * k * k + 64:
        lwork = 2 * k * k + 64
    sizes = {
        "h": n, "d": n, "R": n * n, "Q": n * n, "Z": n * n, "uvec": 2 * n,
        "dq": k * n * n, "dp": k * n * n, "da": k * n, "dv": k * n,
        "dpr2": k * n * n, "tmp2": k * n * n, "tmp2f": k * n * n,
        "kdf": k * n * n, "kdft": k * n * n, "kdfk": k * n * n,
        "sym2": k * n * n, "df": k * n * n, "ghat": k * (n * n + n),
        "ubuf": n * n + n, "grad": k, "svec": k,
        "bmat": (k * k if k * k > n * n else n * n), "ew": (k if k > n else n),
        "tvec": (k if k > n else n),
        "work": lwork, "lf": n * n, "v": n, "w": n, "b": n,
        "kmat": n * n, "ptil": n * n, "xstate": n, "pwork": 3 * (k if k > n else n),
    }
    ws = {name: np.zeros(size) for name, size in sizes.items()}
    ws["iwork"] = np.zeros(3 + 5 * (k if k > n else n), dtype=np.intc)
    ws["piwork"] = np.zeros((k if k > n else n), dtype=np.intc)
    ws["idx"] = np.zeros(n, dtype=np.intc)
    ws["lwork"] = lwork
    ws["liwork"] = 3 + 5 * (k if k > n else n)
    return ws


def ll_filter(double[:, ::1] y, unsigned char[:, ::1] mask, int tag, int n,
              double[::1] omega, double[::1] A, double[::1] B,
              double[::1] f1, double[::1] a1, double[:, ::1] P1,
              double[:, ::1] f_path, double[::1] ll_path):
    """Run the score-driven local-level filter; see _backend for dispatch.

    Returns (status, loglik, t_fail, n_obs) with status 0 on success,
    1 for a diverged GAS update and 2 for a non-invertible innovation
    covariance.
    """
    cdef int T = y.shape[0]
    cdef int k = f1.shape[0]
    cdef int q = k - 2 * n
    if tag == 1 and n < 2:
        raise ValueError("equicorrelation requires at least two series")
    ws = _ll_workspaces(T, n, k)
    cdef double[::1] f = np.array(f1, dtype=float)
    cdef double[::1] a = np.array(a1, dtype=float)
    cdef double[::1] P = np.array(P1, dtype=float).ravel()
    cdef double loglik = 0.0
    cdef int t_fail = -1, n_obs = 0, status
    cdef double[::1] h = ws["h"], d = ws["d"], R = ws["R"], Q = ws["Q"]
    cdef double[::1] Z = ws["Z"], uvec = ws["uvec"], dq = ws["dq"], dp = ws["dp"]
    cdef double[::1] da = ws["da"], dv = ws["dv"], dpr2 = ws["dpr2"]
    cdef double[::1] tmp2 = ws["tmp2"], tmp2f = ws["tmp2f"], kdf = ws["kdf"]
    cdef double[::1] kdft = ws["kdft"], kdfk = ws["kdfk"], sym2 = ws["sym2"]
    cdef double[::1] dfw = ws["df"], ghat = ws["ghat"], ubuf = ws["ubuf"]
    cdef double[::1] grad = ws["grad"], svec = ws["svec"], bmat = ws["bmat"]
    cdef double[::1] ew = ws["ew"], tvec = ws["tvec"], work = ws["work"]
    cdef double[::1] lfb = ws["lf"], v = ws["v"], w = ws["w"], b = ws["b"]
    cdef double[::1] kmat = ws["kmat"], ptil = ws["ptil"], xstate = ws["xstate"]
    cdef double[::1] pwork = ws["pwork"]
    cdef int[::1] iwork = ws["iwork"], piwork = ws["piwork"], idx = ws["idx"]
    cdef int lwork = ws["lwork"], liwork = ws["liwork"]

    with nogil:
        status = _ll_core(T, n, q, k, tag, False,
                          &y[0, 0], &mask[0, 0], &omega[0], &A[0], &B[0],
                          NULL, NULL, NULL, NULL,
                          &f[0], &a[0], &P[0], &f_path[0, 0], &ll_path[0],
                          &loglik, &t_fail, &n_obs,
                          &h[0], &d[0], &R[0], &Q[0], &Z[0], &uvec[0],
                          &dq[0], &dp[0], &da[0], &dv[0], &dpr2[0], &tmp2[0],
                          &tmp2f[0], &kdf[0], &kdft[0], &kdfk[0], &sym2[0],
                          &dfw[0], &ghat[0], &ubuf[0], &grad[0], &svec[0],
                          &bmat[0], &ew[0], &tvec[0], &work[0], lwork,
                          &iwork[0], liwork, &pwork[0], &piwork[0],
                          &lfb[0], &v[0], &w[0], &b[0], &kmat[0], &ptil[0],
                          &xstate[0], &idx[0])
    return status, loglik, t_fail, n_obs


def ll_simulate(int tag, int n, double[::1] omega, double[::1] A,
                double[::1] B, double[::1] f1, double[::1] x1,
                double[:, ::1] xi, double[:, ::1] zeta,
                double[:, ::1] y_out, double[:, ::1] x_out,
                double[:, ::1] f_path):
    """Generate (Y, X, f) paths from pre-drawn standard-normal shocks.

    The parameter path evolves through the same filter recursion applied to
    the generated, fully observed Y. Returns (status, loglik, t_fail).
    """
    cdef int T = xi.shape[0]
    cdef int k = f1.shape[0]
    cdef int q = k - 2 * n
    if tag == 1 and n < 2:
        raise ValueError("equicorrelation requires at least two series")
    ws = _ll_workspaces(T, n, k)
    ll_path_arr = np.zeros(T)
    cdef double[::1] ll_path = ll_path_arr
    cdef double[::1] f = np.array(f1, dtype=float)
    cdef double[::1] a = np.array(x1, dtype=float)   # filter starts at x1
    p1 = np.zeros((n, n))
    cdef double[::1] P = p1.ravel()
    cdef double loglik = 0.0
    cdef int t_fail = -1, n_obs = 0, status
    cdef double[::1] h = ws["h"], d = ws["d"], R = ws["R"], Q = ws["Q"]
    cdef double[::1] Z = ws["Z"], uvec = ws["uvec"], dq = ws["dq"], dp = ws["dp"]
    cdef double[::1] da = ws["da"], dv = ws["dv"], dpr2 = ws["dpr2"]
    cdef double[::1] tmp2 = ws["tmp2"], tmp2f = ws["tmp2f"], kdf = ws["kdf"]
    cdef double[::1] kdft = ws["kdft"], kdfk = ws["kdfk"], sym2 = ws["sym2"]
    cdef double[::1] dfw = ws["df"], ghat = ws["ghat"], ubuf = ws["ubuf"]
    cdef double[::1] grad = ws["grad"], svec = ws["svec"], bmat = ws["bmat"]
    cdef double[::1] ew = ws["ew"], tvec = ws["tvec"], work = ws["work"]
    cdef double[::1] lfb = ws["lf"], v = ws["v"], w = ws["w"], b = ws["b"]
    cdef double[::1] kmat = ws["kmat"], ptil = ws["ptil"]
    cdef double[::1] xstate = np.array(x1, dtype=float)
    cdef double[::1] pwork = ws["pwork"]
    cdef int[::1] iwork = ws["iwork"], piwork = ws["piwork"], idx = ws["idx"]
    cdef int lwork = ws["lwork"], liwork = ws["liwork"]

    with nogil:
        status = _ll_core(T, n, q, k, tag, True,
                          NULL, NULL, &omega[0], &A[0], &B[0],
                          &xi[0, 0], &zeta[0, 0], &y_out[0, 0], &x_out[0, 0],
                          &f[0], &a[0], &P[0], &f_path[0, 0], &ll_path[0],
                          &loglik, &t_fail, &n_obs,
                          &h[0], &d[0], &R[0], &Q[0], &Z[0], &uvec[0],
                          &dq[0], &dp[0], &da[0], &dv[0], &dpr2[0], &tmp2[0],
                          &tmp2f[0], &kdf[0], &kdft[0], &kdfk[0], &sym2[0],
                          &dfw[0], &ghat[0], &ubuf[0], &grad[0], &svec[0],
                          &bmat[0], &ew[0], &tvec[0], &work[0], lwork,
                          &iwork[0], liwork, &pwork[0], &piwork[0],
                          &lfb[0], &v[0], &w[0], &b[0], &kmat[0], &ptil[0],
                          &xstate[0], &idx[0])
    return status, loglik, t_fail


# ---------------------------------------------------------------------------
# t-GAS benchmark: score-driven covariance for heavy-tailed returns
# ---------------------------------------------------------------------------

cdef int _tgas_core(int T, int p, int q, int k, int tag, double nu,
                    bint simulate,
                    double *r, unsigned char *mask,
                    double *omega, double *Avec, double *Bvec,
                    double *zshock, double *psi, double *r_out,
                    double *f, double *f_path, double *ll_path,
                    double *loglik_out, int *t_fail, int *n_obs,
                    double *h, double *d, double *R, double *Q, double *Z,
                    double *uvec, double *dq, double *df, double *ghat,
                    double *ubuf, double *grad, double *svec, double *bmat,
                    double *ew, double *tvec, double *work, int lwork,
                    int *iwork, int liwork, double *pwork, int *piwork,
                    double *lf, double *v, double *w,
                    int *idx) noexcept nogil:
    cdef int t, i, c, j, m, info, mc, cols
    cdef double val, acc, ll_inc, anorm, rcond, alpha = 1.0, fn
    cdef double mq, wt, g, sq, sigu, tau, trj
    cdef double loglik = 0.0
    cdef int nobs = 0
    cdef double *slab
    cdef double *row
    cdef bint any_bad

    for i in range(p):
        if f[i] > EXP_MAX:
            t_fail[0] = 0
            return STATUS_DIVERGED

    for t in range(T):
        memcpy(f_path + (<size_t>t) * k, f, (<size_t>k) * sizeof(double))
        if _assemble_cov(f, p, q, tag, False, h, d, R, Q, dq, k, Z, uvec):
            t_fail[0] = t
            return STATUS_DIVERGED

        if simulate:
            # r_t = D M z sqrt((nu-2)/psi) with M = V sqrt(max(w, 0)) from
            # the eigendecomposition of R; robust to semidefinite states.
            memcpy(bmat, R, (<size_t>p) * p * sizeof(double))
            dsyevd(C_V, C_L, &p, bmat, &p, ew, work, &lwork, iwork, &liwork,
                   &info)
            if info != 0:
                t_fail[0] = t
                return STATUS_NONINVERTIBLE
            for c in range(p):
                ew[c] = sqrt(ew[c]) if ew[c] > 0.0 else 0.0
            val = sqrt((nu - 2.0) / psi[t])
            for i in range(p):
                acc = 0.0
                for c in range(p):
                    acc += bmat[i + c * p] * ew[c] * zshock[(<size_t>t) * p + c]
                r_out[(<size_t>t) * p + i] = d[i] * acc * val
            m = p
            for i in range(p):
                idx[i] = i
        else:
            m = 0
            for i in range(p):
                if mask[(<size_t>t) * p + i]:
                    idx[m] = i
                    m += 1

        if m == 0:
            ll_path[t] = 0.0
            for j in range(k):
                svec[j] = 0.0
        else:
            for c in range(m):
                if simulate:
                    v[c] = r_out[(<size_t>t) * p + idx[c]]
                else:
                    v[c] = r[(<size_t>t) * p + idx[c]]
            for i in range(m):
                for c in range(m):
                    lf[i + c * m] = Q[idx[i] * p + idx[c]]
            anorm = 0.0
            for c in range(m):
                acc = 0.0
                for i in range(m):
                    acc += fabs(lf[i + c * m])
                if acc > anorm:
                    anorm = acc
            if anorm != anorm or anorm > 1e300:
                t_fail[0] = t
                return STATUS_NONINVERTIBLE
            dpotrf(C_L, &m, lf, &m, &info)
            if info != 0:
                t_fail[0] = t
                return STATUS_NONINVERTIBLE
            dpocon(C_L, &m, lf, &m, &anorm, &rcond, pwork, piwork, &info)
            if info != 0 or rcond < F_RCOND_MIN:
                t_fail[0] = t
                return STATUS_NONINVERTIBLE

            memcpy(w, v, (<size_t>m) * sizeof(double))
            i = 1
            dtrtrs(C_L, C_N, C_N, &m, &i, lf, &m, w, &m, &info)
            mq = 0.0
            for c in range(m):
                mq += w[c] * w[c]
            ll_inc = (lgamma(0.5 * (nu + m)) - lgamma(0.5 * nu)
                      - 0.5 * m * log((nu - 2.0) * M_PI)
                      - 0.5 * (nu + m) * log1p(mq / (nu - 2.0)))
            for c in range(m):
                ll_inc -= log(lf[c + c * m])
            loglik += ll_inc
            ll_path[t] = ll_inc
            nobs += 1

            # dSigma~ gather, then G1_j = L^-1 dSigma_j L^-T (stacked)
            for j in range(k):
                slab = df + (<size_t>j) * m * m
                row = dq + (<size_t>j) * p * p
                for i in range(m):
                    for c in range(m):
                        slab[i * m + c] = row[idx[i] * p + idx[c]]
            cols = k * m
            dtrsm(C_L, C_L, C_N, C_N, &m, &cols, &alpha, lf, &m, df, &m)
            for j in range(k):
                slab = df + (<size_t>j) * m * m
                for i in range(m):
                    for c in range(i + 1, m):
                        val = slab[i * m + c]
                        slab[i * m + c] = slab[c * m + i]
                        slab[c * m + i] = val
            dtrsm(C_L, C_L, C_N, C_N, &m, &cols, &alpha, lf, &m, df, &m)

            wt = (nu + m) / (nu - 2.0 + mq)
            g = (nu + m) / (nu + m + 2.0)
            sq = sqrt(0.5 * g)
            sigu = sqrt(nu / (2.0 * (nu + m + 2.0)))
            tau = (sigu - sq) / m
            mc = m * m
            for j in range(k):
                val = d[j] * d[j] if j < p else 1.0
                row = ghat + (<size_t>j) * mc
                slab = df + (<size_t>j) * m * m
                trj = 0.0
                for c in range(m):
                    trj += slab[c * m + c]
                for i in range(m):
                    for c in range(m):
                        acc = sq * slab[i * m + c]
                        if i == c:
                            acc += tau * trj
                        row[i * m + c] = val * acc
            # u = M^{-1/2} (1/2) vec(wt zz' - I)
            val = (1.0 / sigu - 1.0 / sq) / m      # tau tilde
            trj = wt * mq - m                      # tr(wt zz' - I)
            for i in range(m):
                for c in range(m):
                    acc = wt * w[i] * w[c]
                    if i == c:
                        acc -= 1.0
                    acc = acc / sq
                    if i == c:
                        acc += val * trj
                    ubuf[i * m + c] = 0.5 * acc
            if _scaled_from_gram(k, mc, ghat, ubuf, grad, svec, bmat, ew,
                                 tvec, work, lwork, iwork, liwork,
                                 pwork, piwork):
                t_fail[0] = t
                return STATUS_DIVERGED

        any_bad = False
        for j in range(k):
            fn = omega[j] + Avec[j] * svec[j] + Bvec[j] * f[j]
            if fn != fn or fabs(fn) > 1e300:
                any_bad = True
            elif j < p and fabs(fn) > LOG_VAR_CAP:
                any_bad = True
            f[j] = fn
        if any_bad:
            t_fail[0] = t
            return STATUS_DIVERGED

    loglik_out[0] = loglik
    n_obs[0] = nobs
    return STATUS_OK


def _tgas_workspaces(int p, int k):
    cdef int big = k if k > p else p
    cdef int lwork = _eig_lwork(big)
    if lwork < 2 * k * k + 64:
        lwork = 2 * k * k + 64
    sizes = {
        "h": p, "d": p, "R": p * p, "Q": p * p, "Z": p * p, "uvec": 2 * p,
        "dq": k * p * p, "df": k * p * p, "ghat": k * p * p,
        "ubuf": p * p, "grad": k, "svec": k,
        "bmat": (k * k if k * k > p * p else p * p),
        "ew": big, "tvec": big, "work": lwork,
        "lf": p * p, "v": p, "w": p, "pwork": 3 * big,
    }
    ws = {name: np.zeros(size) for name, size in sizes.items()}
    ws["iwork"] = np.zeros(3 + 5 * big, dtype=np.intc)
    ws["piwork"] = np.zeros(big, dtype=np.intc)
    ws["idx"] = np.zeros(p, dtype=np.intc)
    ws["lwork"] = lwork
    ws["liwork"] = 3 + 5 * big
    return ws


def tgas_filter(double[:, ::1] r, unsigned char[:, ::1] mask, int tag,
                double nu, double[::1] omega, double[::1] A, double[::1] B,
                double[::1] f1, double[:, ::1] f_path, double[::1] ll_path):
    """Student-t score-driven covariance filter on a returns panel.

    Returns (status, loglik, t_fail, n_obs); status codes as in ll_filter.
    """
    cdef int T = r.shape[0]
    cdef int p = r.shape[1]
    cdef int k = f1.shape[0]
    cdef int q = k - p
    if (tag == 1 and p < 2) or nu <= 2.0:
        raise ValueError("need nu > 2 and at least two series for equicorrelation")
    ws = _tgas_workspaces(p, k)
    cdef double[::1] f = np.array(f1, dtype=float)
    cdef double loglik = 0.0
    cdef int t_fail = -1, n_obs = 0, status
    cdef double[::1] h = ws["h"], d = ws["d"], R = ws["R"], Q = ws["Q"]
    cdef double[::1] Z = ws["Z"], uvec = ws["uvec"], dq = ws["dq"], dfw = ws["df"]
    cdef double[::1] ghat = ws["ghat"], ubuf = ws["ubuf"], grad = ws["grad"]
    cdef double[::1] svec = ws["svec"], bmat = ws["bmat"], ew = ws["ew"]
    cdef double[::1] tvec = ws["tvec"], work = ws["work"], lfb = ws["lf"]
    cdef double[::1] v = ws["v"], w = ws["w"], pwork = ws["pwork"]
    cdef int[::1] iwork = ws["iwork"], piwork = ws["piwork"], idx = ws["idx"]
    cdef int lwork = ws["lwork"], liwork = ws["liwork"]

    with nogil:
        status = _tgas_core(T, p, q, k, tag, nu, False,
                            &r[0, 0], &mask[0, 0], &omega[0], &A[0], &B[0],
                            NULL, NULL, NULL,
                            &f[0], &f_path[0, 0], &ll_path[0],
                            &loglik, &t_fail, &n_obs,
                            &h[0], &d[0], &R[0], &Q[0], &Z[0], &uvec[0],
                            &dq[0], &dfw[0], &ghat[0], &ubuf[0], &grad[0],
                            &svec[0], &bmat[0], &ew[0], &tvec[0], &work[0],
                            lwork, &iwork[0], liwork, &pwork[0], &piwork[0],
                            &lfb[0], &v[0], &w[0], &idx[0])
    return status, loglik, t_fail, n_obs


def tgas_simulate(int tag, double nu, double[::1] omega, double[::1] A,
                  double[::1] B, double[::1] f1, double[:, ::1] z,
                  double[::1] psi, double[:, ::1] r_out,
                  double[:, ::1] f_path):
    """Generate t-distributed returns from pre-drawn normals and chi-squares.

    Returns (status, loglik, t_fail).
    """
    cdef int T = z.shape[0]
    cdef int p = z.shape[1]
    cdef int k = f1.shape[0]
    cdef int q = k - p
    if (tag == 1 and p < 2) or nu <= 2.0:
        raise ValueError("need nu > 2 and at least two series for equicorrelation")
    ws = _tgas_workspaces(p, k)
    ll_path_arr = np.zeros(T)
    cdef double[::1] ll_path = ll_path_arr
    cdef double[::1] f = np.array(f1, dtype=float)
    cdef double loglik = 0.0
    cdef int t_fail = -1, n_obs = 0, status
    cdef double[::1] h = ws["h"], d = ws["d"], R = ws["R"], Q = ws["Q"]
    cdef double[::1] Z = ws["Z"], uvec = ws["uvec"], dq = ws["dq"], dfw = ws["df"]
    cdef double[::1] ghat = ws["ghat"], ubuf = ws["ubuf"], grad = ws["grad"]
    cdef double[::1] svec = ws["svec"], bmat = ws["bmat"], ew = ws["ew"]
    cdef double[::1] tvec = ws["tvec"], work = ws["work"], lfb = ws["lf"]
    cdef double[::1] v = ws["v"], w = ws["w"], pwork = ws["pwork"]
    cdef int[::1] iwork = ws["iwork"], piwork = ws["piwork"], idx = ws["idx"]
    cdef int lwork = ws["lwork"], liwork = ws["liwork"]

    with nogil:
        status = _tgas_core(T, p, q, k, tag, nu, True,
                            NULL, NULL, &omega[0], &A[0], &B[0],
                            &z[0, 0], &psi[0], &r_out[0, 0],
                            &f[0], &f_path[0, 0], &ll_path[0],
                            &loglik, &t_fail, &n_obs,
                            &h[0], &d[0], &R[0], &Q[0], &Z[0], &uvec[0],
                            &dq[0], &dfw[0], &ghat[0], &ubuf[0], &grad[0],
                            &svec[0], &bmat[0], &ew[0], &tvec[0], &work[0],
                            lwork, &iwork[0], liwork, &pwork[0], &piwork[0],
                            &lfb[0], &v[0], &w[0], &idx[0])
    return status, loglik, t_fail


# ---------------------------------------------------------------------------
# benchmark recursions: GARCH(1,1), DCC, EWMA
# ---------------------------------------------------------------------------

def garch_recursion(double[::1] r2, double omega, double alpha, double beta,
                    double s1, double[::1] sig2_out):
    """Gaussian QML log-likelihood of a GARCH(1,1) variance recursion.

    Returns (status, loglik); status 1 flags a non-positive or non-finite
    variance path.
    """
    cdef int T = r2.shape[0]
    cdef int t
    cdef double s = s1, ll = 0.0
    for t in range(T):
        if s <= 1e-300 or s != s:
            return 1, 0.0
        sig2_out[t] = s
        ll += -0.5 * (LOG2PI + log(s) + r2[t] / s)
        s = omega + alpha * r2[t] + beta * s
    return 0, ll


def dcc_recursion(double[:, ::1] eps, double a, double b,
                  double[:, ::1] Qbar, double[:, :, ::1] R_out):
    """Correlation-part QML log-likelihood of the DCC recursion.

    eps holds standardized residuals. Fills R_out with the per-step
    correlation matrices. Returns (status, loglik).
    """
    cdef int T = eps.shape[0]
    cdef int n = eps.shape[1]
    cdef int t, i, j, info, one = 1
    cdef double ll = 0.0, acc, qii
    qmat_arr = np.array(Qbar, dtype=float, copy=True)
    lmat_arr = np.zeros((n, n))
    w_arr = np.zeros(n)
    dinv_arr = np.zeros(n)
    cdef double[:, ::1] qmat = qmat_arr
    cdef double[:, ::1] lmat = lmat_arr
    cdef double[::1] w = w_arr
    cdef double[::1] dinv = dinv_arr

    for t in range(T):
        for i in range(n):
            qii = qmat[i, i]
            if qii <= 0.0 or qii != qii:
                return 1, 0.0
            dinv[i] = 1.0 / sqrt(qii)
        for i in range(n):
            for j in range(n):
                R_out[t, i, j] = qmat[i, j] * dinv[i] * dinv[j]
        # chol of R (Fortran-lower on the symmetric buffer)
        for i in range(n):
            for j in range(n):
                lmat[i, j] = R_out[t, i, j]
        dpotrf(C_L, &n, &lmat[0, 0], &n, &info)
        if info != 0:
            return 1, 0.0
        for i in range(n):
            w[i] = eps[t, i]
        dtrtrs(C_L, C_N, C_N, &n, &one, &lmat[0, 0], &n, &w[0], &n, &info)
        acc = 0.0
        for i in range(n):
            acc += w[i] * w[i] - eps[t, i] * eps[t, i]
            acc += 2.0 * log(lmat[i, i])
        ll += -0.5 * acc
        for i in range(n):
            for j in range(n):
                qmat[i, j] = ((1.0 - a - b) * Qbar[i, j]
                              + a * eps[t, i] * eps[t, j] + b * qmat[i, j])
    return 0, ll


def ewma_recursion(double[:, ::1] r, double gamma, double[:, ::1] S1,
                   double[:, :, ::1] S_out):
    """Exponentially weighted covariance path: S_out[t] holds the
    prediction for step t, updated with r[t] afterwards."""
    cdef int T = r.shape[0]
    cdef int n = r.shape[1]
    cdef int t, i, j
    s_arr = np.array(S1, dtype=float, copy=True)
    cdef double[:, ::1] s = s_arr
    for t in range(T):
        for i in range(n):
            for j in range(n):
                S_out[t, i, j] = s[i, j]
        for i in range(n):
            for j in range(n):
                s[i, j] = gamma * s[i, j] + (1.0 - gamma) * r[t, i] * r[t, j]
    return 0
