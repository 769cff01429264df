# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled numerical kernels.

Every function here has a numpy twin in :mod:`bdmfilter._pykernels` with the
same signature and semantics; :mod:`bdmfilter._backend` picks one at import.
Inputs must be C-contiguous float64 arrays (the Python layer takes care of it).
"""
import numpy as np
from libc.math cimport sqrt, sin, cos, exp, fabs


TAYLOR_OMEGA = 1e-6
cdef double _TAYLOR = 1e-6


cdef int _chol(double[:, ::1] A, double[:, ::1] L, Py_ssize_t d) noexcept nogil:
    cdef Py_ssize_t i, j, k
    cdef double s
    for j in range(d):
        s = A[j, j]
        for k in range(j):
            s = s - L[j, k] * L[j, k]
        if not (s > 0.0):
            return -1
        L[j, j] = sqrt(s)
        for i in range(j + 1, d):
            s = A[i, j]
            for k in range(j):
                s = s - L[i, k] * L[j, k]
            L[i, j] = s / L[j, j]
    return 0


def cholesky_jitter(const double[:, ::1] cov):
    """Lower Cholesky factor with escalating diagonal jitter.

    Returns the factor, or raises ``numpy.linalg.LinAlgError`` after three
    failed jittered retries. An all-zero matrix factors to zero.
    """
    cdef Py_ssize_t d = cov.shape[0]
    cdef Py_ssize_t i, j, attempt
    cdef double tr = 0.0, amax = 0.0, base, jit
    for i in range(d):
        tr += cov[i, i]
        for j in range(d):
            if fabs(cov[i, j]) > amax:
                amax = fabs(cov[i, j])
    L_arr = np.zeros((d, d))
    if amax == 0.0:
        return L_arr
    cdef double[:, ::1] L = L_arr
    A_arr = np.empty((d, d))
    cdef double[:, ::1] A = A_arr
    base = 1e-9 * tr / d
    for attempt in range(4):
        jit = 0.0 if attempt == 0 else base * 10.0 ** (attempt - 1)
        for i in range(d):
            for j in range(d):
                A[i, j] = cov[i, j]
                L[i, j] = 0.0
            A[i, i] += jit
        if jit < 0.0:
            break
        if _chol(A, L, d) == 0:
            return L_arr
    raise np.linalg.LinAlgError("degenerate covariance")


def sigma_points(const double[::1] mean, const double[:, ::1] cov, double lam):
    """Scaled unscented sigma points, shape (2d+1, d)."""
    cdef Py_ssize_t d = mean.shape[0]
    cdef Py_ssize_t i, j
    cdef double[:, ::1] L = cholesky_jitter(cov)
    cdef double scale = sqrt(d + lam)
    out_arr = np.empty((2 * d + 1, d))
    cdef double[:, ::1] out = out_arr
    for j in range(d):
        out[0, j] = mean[j]
    for i in range(d):
        for j in range(d):
            # column i of L is the i-th spread direction
            out[1 + i, j] = mean[j] + scale * L[j, i]
            out[1 + d + i, j] = mean[j] - scale * L[j, i]
    return out_arr


def weighted_moments(const double[:, ::1] X, const double[:, ::1] Y,
                     const double[::1] xmean, const double[::1] wm,
                     const double[::1] wc):
    """Weighted mean of Y, covariance of Y and cross-covariance of (X, Y)."""
    cdef Py_ssize_t N = X.shape[0], d = X.shape[1], p = Y.shape[1]
    cdef Py_ssize_t i, a, b
    cdef double w
    mu_arr = np.zeros(p)
    S_arr = np.zeros((p, p))
    C_arr = np.zeros((d, p))
    dy_arr = np.empty(p)
    dx_arr = np.empty(d)
    cdef double[::1] mu = mu_arr, dy = dy_arr, dx = dx_arr
    cdef double[:, ::1] S = S_arr, C = C_arr
    for i in range(N):
        for a in range(p):
            mu[a] += wm[i] * Y[i, a]
    for i in range(N):
        w = wc[i]
        for a in range(p):
            dy[a] = Y[i, a] - mu[a]
        for a in range(d):
            dx[a] = X[i, a] - xmean[a]
        for a in range(p):
            for b in range(a, p):
                S[a, b] += w * dy[a] * dy[b]
        for a in range(d):
            for b in range(p):
                C[a, b] += w * dx[a] * dy[b]
    for a in range(p):
        for b in range(a):
            S[a, b] = S[b, a]
    return mu_arr, S_arr, C_arr


cdef inline void _turn_coeffs(double w, double zeta, double* sw, double* cw,
                              double* s, double* c) noexcept nogil:
    # sw = sin(w z)/w, cw = (cos(w z) - 1)/w
    s[0] = sin(w * zeta)
    c[0] = cos(w * zeta)
    if fabs(w) < _TAYLOR:
        sw[0] = zeta - w * w * zeta * zeta * zeta / 6.0
        cw[0] = -w * zeta * zeta / 2.0
    else:
        sw[0] = s[0] / w
        cw[0] = -2.0 * sin(0.5 * w * zeta) * sin(0.5 * w * zeta) / w


def coord_turn(const double[:, ::1] X, double zeta):
    """Coordinated-turn transition applied row-wise to X (N, 5)."""
    cdef Py_ssize_t N = X.shape[0], r
    cdef double sw, cw, s, c, a, ad, b, bd, w
    out_arr = np.empty((N, 5))
    cdef double[:, ::1] out = out_arr
    for r in range(N):
        a = X[r, 0]; ad = X[r, 1]; b = X[r, 2]; bd = X[r, 3]; w = X[r, 4]
        _turn_coeffs(w, zeta, &sw, &cw, &s, &c)
        out[r, 0] = a + sw * ad + cw * bd
        out[r, 1] = c * ad - s * bd
        out[r, 2] = -cw * ad + b + sw * bd
        out[r, 3] = s * ad + c * bd
        out[r, 4] = w
    return out_arr


def coord_turn_jacobian(const double[:, ::1] X, double zeta):
    """Jacobians of the coordinated-turn map, shape (N, 5, 5)."""
    cdef Py_ssize_t N = X.shape[0], r
    cdef double sw, cw, s, c, ad, bd, w, dsw, dcw, z2
    out_arr = np.zeros((N, 5, 5))
    cdef double[:, :, ::1] J = out_arr
    z2 = zeta * zeta
    for r in range(N):
        ad = X[r, 1]; bd = X[r, 3]; w = X[r, 4]
        _turn_coeffs(w, zeta, &sw, &cw, &s, &c)
        if fabs(w) < _TAYLOR:
            dsw = -w * z2 * zeta / 3.0
            dcw = -z2 / 2.0 + w * w * z2 * z2 / 24.0
        else:
            dsw = (zeta * c * w - s) / (w * w)
            dcw = (-zeta * s * w - c + 1.0) / (w * w)
        J[r, 0, 0] = 1.0; J[r, 0, 1] = sw; J[r, 0, 3] = cw
        J[r, 0, 4] = dsw * ad + dcw * bd
        J[r, 1, 1] = c; J[r, 1, 3] = -s
        J[r, 1, 4] = -zeta * s * ad - zeta * c * bd
        J[r, 2, 1] = -cw; J[r, 2, 2] = 1.0; J[r, 2, 3] = sw
        J[r, 2, 4] = -dcw * ad + dsw * bd
        J[r, 3, 1] = s; J[r, 3, 3] = c
        J[r, 3, 4] = zeta * c * ad - zeta * s * bd
        J[r, 4, 4] = 1.0
    return out_arr


def ranges(const double[:, ::1] X, const double[:, ::1] sensors):
    """Euclidean distance from positions (X[:, 0], X[:, 2]) to each sensor."""
    cdef Py_ssize_t N = X.shape[0], m = sensors.shape[0], r, i
    cdef double da, db
    out_arr = np.empty((N, m))
    cdef double[:, ::1] out = out_arr
    for r in range(N):
        for i in range(m):
            da = X[r, 0] - sensors[i, 0]
            db = X[r, 2] - sensors[i, 1]
            out[r, i] = sqrt(da * da + db * db)
    return out_arr


def range_jacobian(const double[:, ::1] X, const double[:, ::1] sensors):
    """Jacobians of :func:`ranges`, shape (N, m, 5); zero rows at a sensor."""
    cdef Py_ssize_t N = X.shape[0], m = sensors.shape[0], r, i
    cdef double da, db, rho
    out_arr = np.zeros((N, m, 5))
    cdef double[:, :, ::1] J = out_arr
    for r in range(N):
        for i in range(m):
            da = X[r, 0] - sensors[i, 0]
            db = X[r, 2] - sensors[i, 1]
            rho = sqrt(da * da + db * db)
            if rho > 0.0:
                J[r, i, 0] = da / rho
                J[r, i, 2] = db / rho
    return out_arr


def mixture_score_info(const double[:, ::1] logw, const double[:, :, ::1] resid,
                       const double[:, :, ::1] H):
    """Monte-Carlo Fisher information of a Gaussian-mixture likelihood.

    For each joint sample j the score is ``H[j].T @ sum_i softmax(logw[j])_i
    resid[j, i]``; the result is the mean outer product of the scores.
    """
    cdef Py_ssize_t N2 = logw.shape[0], N1 = logw.shape[1]
    cdef Py_ssize_t m = resid.shape[2], n = H.shape[2]
    cdef Py_ssize_t j, i, a, b
    cdef double mx, w, tot
    info_arr = np.zeros((n, n))
    v_arr = np.empty(m)
    s_arr = np.empty(n)
    cdef double[:, ::1] info = info_arr
    cdef double[::1] v = v_arr, s = s_arr
    for j in range(N2):
        mx = logw[j, 0]
        for i in range(1, N1):
            if logw[j, i] > mx:
                mx = logw[j, i]
        for a in range(m):
            v[a] = 0.0
        tot = 0.0
        for i in range(N1):
            w = exp(logw[j, i] - mx)
            tot += w
            for a in range(m):
                v[a] += w * resid[j, i, a]
        for a in range(m):
            v[a] /= tot
        for b in range(n):
            s[b] = 0.0
            for a in range(m):
                s[b] += H[j, a, b] * v[a]
        for a in range(n):
            for b in range(a, n):
                info[a, b] += s[a] * s[b]
    for a in range(n):
        for b in range(a, n):
            info[a, b] /= N2
            info[b, a] = info[a, b]
    return info_arr
