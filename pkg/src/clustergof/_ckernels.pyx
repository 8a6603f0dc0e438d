# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; see ``_pykernels`` for the reference semantics."""

import numpy as np

from libc.math cimport exp, log, fabs, sqrt, INFINITY

cdef double LOG_2PI = 1.8378770664093453

EL_CONVERGED = 0
EL_MAX_ITER = 1
EL_SEPARATED = 2


def gauss_diag_log_joint(const double[:, ::1] X, const double[:, ::1] means,
                         const double[:, ::1] variances, const double[::1] log_pi):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], K = means.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double s, t
    out = np.empty((n, K))
    inv_arr = np.empty((K, d))
    const_arr = np.empty(K)
    cdef double[:, ::1] L = out
    cdef double[:, ::1] inv = inv_arr
    cdef double[::1] c = const_arr
    for k in range(K):
        c[k] = log_pi[k] - 0.5 * d * LOG_2PI
        for j in range(d):
            inv[k, j] = 1.0 / variances[k, j]
            c[k] -= 0.5 * log(variances[k, j])
    with nogil:
        for i in range(n):
            for k in range(K):
                s = 0.0
                for j in range(d):
                    t = X[i, j] - means[k, j]
                    s += t * t * inv[k, j]
                L[i, k] = c[k] - 0.5 * s
    return out


def normalize_log_rows(const double[:, ::1] L):
    cdef Py_ssize_t n = L.shape[0], K = L.shape[1], i, k
    cdef double m, s, v
    post_arr = np.empty((n, K))
    lse_arr = np.empty(n)
    cdef double[:, ::1] post = post_arr
    cdef double[::1] lse = lse_arr
    with nogil:
        for i in range(n):
            m = -INFINITY
            for k in range(K):
                if L[i, k] > m:
                    m = L[i, k]
            if m == -INFINITY:
                lse[i] = -INFINITY
                for k in range(K):
                    post[i, k] = 0.0 / 0.0
                continue
            s = 0.0
            for k in range(K):
                v = exp(L[i, k] - m)
                post[i, k] = v
                s += v
            lse[i] = m + log(s)
            for k in range(K):
                post[i, k] /= s
    return post_arr, lse_arr


def bernstein_eval(const double[:, ::1] A, const long long[:, ::1] exponents,
                   const double[::1] coefs):
    cdef Py_ssize_t n = A.shape[0], K = A.shape[1], p = exponents.shape[0]
    cdef Py_ssize_t i, j, k
    cdef long long e, r
    cdef double v
    out_arr = np.empty((n, p))
    cdef double[:, ::1] out = out_arr
    with nogil:
        for i in range(n):
            for j in range(p):
                v = coefs[j]
                for k in range(K):
                    e = exponents[j, k]
                    for r in range(e):
                        v *= A[i, k]
                out[i, j] = v
    return out_arr


cdef inline double _log_star(double z, double eps, double log_eps,
                             double* d1, double* w2) noexcept nogil:
    if z >= eps:
        d1[0] = 1.0 / z
        w2[0] = d1[0] * d1[0]
        return log(z)
    d1[0] = 2.0 / eps - z / (eps * eps)
    w2[0] = 1.0 / (eps * eps)
    return log_eps - 1.5 + 2.0 * z / eps - z * z / (2.0 * eps * eps)


cdef double _objective(const double[:, ::1] Psi, double[::1] lam, double eps,
                       double log_eps, double[::1] d1, double[::1] w2) noexcept nogil:
    cdef Py_ssize_t n = Psi.shape[0], p = Psi.shape[1], i, j
    cdef double z, total = 0.0
    for i in range(n):
        z = 1.0
        for j in range(p):
            z += Psi[i, j] * lam[j]
        total += _log_star(z, eps, log_eps, &d1[i], &w2[i])
    return total


cdef bint _cholesky(double[:, ::1] A, double[:, ::1] Lc, Py_ssize_t p) noexcept nogil:
    cdef Py_ssize_t i, j, k
    cdef double s
    for i in range(p):
        for j in range(i + 1):
            s = A[i, j]
            for k in range(j):
                s -= Lc[i, k] * Lc[j, k]
            if i == j:
                if not s > 0.0:
                    return False
                Lc[i, i] = sqrt(s)
            else:
                Lc[i, j] = s / Lc[j, j]
    return True


def el_dual_newton(const double[:, ::1] Psi, double tol, int max_iter):
    cdef Py_ssize_t n = Psi.shape[0], p = Psi.shape[1]
    cdef Py_ssize_t i, j, k, attempt
    cdef double eps = 1.0 / n
    cdef double log_eps = log(eps)
    cdef double obj, cobj, t, gmax, pmin, pmax, z, ridge, scale, s
    cdef int it = 0, status = EL_MAX_ITER
    cdef bint ok, polish

    lam_arr = np.zeros(p)
    cand_arr = np.empty(p)
    g_arr = np.empty(p)
    step_arr = np.empty(p)
    y_arr = np.empty(p)
    J_arr = np.empty((p, p))
    Jr_arr = np.empty((p, p))
    Lc_arr = np.zeros((p, p))
    d1_arr = np.empty(n)
    w2_arr = np.empty(n)
    cd1_arr = np.empty(n)
    cw2_arr = np.empty(n)
    cdef double[::1] lam = lam_arr
    cdef double[::1] cand = cand_arr
    cdef double[::1] g = g_arr
    cdef double[::1] step = step_arr
    cdef double[::1] y = y_arr
    cdef double[:, ::1] J = J_arr
    cdef double[:, ::1] Jr = Jr_arr
    cdef double[:, ::1] Lc = Lc_arr
    cdef double[::1] d1 = d1_arr
    cdef double[::1] w2 = w2_arr
    cdef double[::1] cd1 = cd1_arr
    cdef double[::1] cw2 = cw2_arr

    obj = _objective(Psi, lam, eps, log_eps, d1, w2)
    trace = [obj]

    while True:
        # gradient and separation certificate at the current iterate
        for j in range(p):
            g[j] = 0.0
        pmin = INFINITY
        pmax = -INFINITY
        for i in range(n):
            z = 0.0
            for j in range(p):
                z += Psi[i, j] * lam[j]
                g[j] += Psi[i, j] * d1[i]
            if z < pmin:
                pmin = z
            if z > pmax:
                pmax = z
        gmax = 0.0
        for j in range(p):
            if fabs(g[j]) > gmax:
                gmax = fabs(g[j])
        if gmax / n <= tol:
            status = EL_CONVERGED
            break
        if it > 0 and pmin >= 0.0 and pmax > 0.0:
            status = EL_SEPARATED
            break
        if it == max_iter:
            break

        for j in range(p):
            for k in range(j + 1):
                s = 0.0
                for i in range(n):
                    s += Psi[i, j] * Psi[i, k] * w2[i]
                J[j, k] = s
                J[k, j] = s
        scale = 0.0
        for j in range(p):
            scale += J[j, j]
        scale = scale / p
        if scale < 1e-300:
            scale = 1e-300
        ridge = 0.0
        ok = False
        for attempt in range(30):
            for j in range(p):
                for k in range(p):
                    Jr[j, k] = J[j, k]
                Jr[j, j] += ridge
            if _cholesky(Jr, Lc, p):
                ok = True
                break
            ridge = 1e-12 * scale if ridge == 0.0 else ridge * 10.0
        if not ok:
            raise np.linalg.LinAlgError("Newton system is not positive definite")
        for j in range(p):
            s = g[j]
            for k in range(j):
                s -= Lc[j, k] * y[k]
            y[j] = s / Lc[j, j]
        for j in range(p - 1, -1, -1):
            s = y[j]
            for k in range(j + 1, p):
                s -= Lc[k, j] * step[k]
            step[j] = s / Lc[j, j]
        s = 0.0
        for j in range(p):
            s += g[j] * step[j]
        # near the optimum the gain is below the resolution of the objective,
        # so the full Newton step is taken without a line search
        polish = 0.5 * s <= 1e-12 * max(1.0, fabs(obj))

        t = 1.0
        while True:
            for j in range(p):
                cand[j] = lam[j] + t * step[j]
            cobj = _objective(Psi, cand, eps, log_eps, cd1, cw2)
            if polish or cobj >= obj or t < 1e-12:
                break
            t *= 0.5
        if not polish and (cobj < obj or t < 1e-12):
            status = EL_CONVERGED if gmax / n <= 1e3 * tol else EL_MAX_ITER
            break
        for j in range(p):
            lam[j] = cand[j]
        for i in range(n):
            d1[i] = cd1[i]
            w2[i] = cw2[i]
        obj = cobj
        trace.append(obj)
        it += 1
    return lam_arr, it, status, np.asarray(trace)
