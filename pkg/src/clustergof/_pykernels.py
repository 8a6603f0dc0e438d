"""Reference numpy implementations of the hot kernels.

These are the fallback used when the compiled ``_ckernels`` extension is not
available, and the oracle the compiled versions are tested against. Every
function here has a twin with the same signature in ``_ckernels.pyx``.
"""

import math

import numpy as np

_LOG_2PI = math.log(2.0 * math.pi)

EL_CONVERGED = 0
EL_MAX_ITER = 1
EL_SEPARATED = 2


def gauss_diag_log_joint(X, means, variances, log_pi):
    """``log pi_k + log N(x_i; mu_k, diag(var_k))`` as an (n, K) array."""
    X = np.ascontiguousarray(X, dtype=float)
    n = X.shape[0]
    K = means.shape[0]
    out = np.empty((n, K))
    for k in range(K):
        inv = 1.0 / variances[k]
        const = log_pi[k] - 0.5 * (X.shape[1] * _LOG_2PI + np.log(variances[k]).sum())
        diff = X - means[k]
        out[:, k] = const - 0.5 * (diff * diff) @ inv
    return out


def normalize_log_rows(L):
    """Row-wise softmax of log weights; returns ``(posterior, log_sum_exp)``."""
    L = np.asarray(L, dtype=float)
    m = L.max(axis=1, keepdims=True)
    empty = m[:, 0] == -np.inf
    m[empty] = 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.exp(L - m)
        s = w.sum(axis=1, keepdims=True)
        lse = (m + np.log(s))[:, 0]
        post = w / s
    post[empty] = np.nan
    return post, lse


def bernstein_eval(A, exponents, coefs):
    """Evaluate ``coef_j * prod_k a_k ** e_jk`` for every row of ``A``."""
    A = np.asarray(A, dtype=float)
    exponents = np.asarray(exponents, dtype=np.int64)
    out = np.empty((A.shape[0], exponents.shape[0]))
    for j, e in enumerate(exponents):
        col = np.full(A.shape[0], float(coefs[j]))
        for k in np.nonzero(e)[0]:
            col *= A[:, k] ** int(e[k])
        out[:, j] = col
    return out


def _log_star(z, eps):
    # log below eps replaced by its second-order Taylor expansion at eps
    inside = z >= eps
    zz = np.where(inside, z, eps)
    val = np.where(
        inside,
        np.log(zz),
        math.log(eps) - 1.5 + 2.0 * z / eps - z * z / (2.0 * eps * eps),
    )
    d1 = np.where(inside, 1.0 / zz, 2.0 / eps - z / (eps * eps))
    w2 = np.where(inside, 1.0 / (zz * zz), 1.0 / (eps * eps))
    return val, d1, w2


def el_dual_newton(Psi, tol, max_iter):
    """Damped Newton ascent on the extended-log empirical-likelihood dual.

    Returns ``(lam, n_iter, status, trace)`` where ``trace`` holds the dual
    objective at every accepted iterate, starting with the value at zero.
    """
    Psi = np.ascontiguousarray(Psi, dtype=float)
    n, p = Psi.shape
    eps = 1.0 / n
    lam = np.zeros(p)
    val, d1, w2 = _log_star(np.ones(n), eps)
    obj = val.sum()
    trace = [obj]
    status = EL_MAX_ITER
    it = 0
    for it in range(max_iter + 1):
        proj = Psi @ lam
        g = Psi.T @ d1
        if np.max(np.abs(g)) / n <= tol:
            status = EL_CONVERGED
            break
        if it > 0 and proj.min() >= 0.0 and proj.max() > 0.0:
            status = EL_SEPARATED
            break
        if it == max_iter:
            break
        J = (Psi * w2[:, None]).T @ Psi
        step = _chol_solve_ridge(J, g)
        t = 1.0
        # near the optimum the gain is below the resolution of the objective,
        # so the full Newton step is taken without a line search
        polish = 0.5 * (g @ step) <= 1e-12 * max(1.0, abs(obj))
        while True:
            cand = lam + t * step
            cval, cd1, cw2 = _log_star(1.0 + Psi @ cand, eps)
            cobj = cval.sum()
            if polish or cobj >= obj or t < 1e-12:
                break
            t *= 0.5
        if not polish and (cobj < obj or t < 1e-12):
            # no ascent possible along the Newton direction
            status = EL_CONVERGED if np.max(np.abs(g)) / n <= 1e3 * tol else EL_MAX_ITER
            break
        lam, obj, d1, w2 = cand, cobj, cd1, cw2
        trace.append(obj)
    return lam, it, status, np.asarray(trace)


def _chol_solve_ridge(J, g):
    p = J.shape[0]
    ridge = 0.0
    scale = max(np.trace(J) / p, 1e-300)
    for _ in range(30):
        try:
            Lc = np.linalg.cholesky(J + ridge * np.eye(p))
        except np.linalg.LinAlgError:
            ridge = 1e-12 * scale if ridge == 0.0 else ridge * 10.0
            continue
        y = np.linalg.solve(Lc, g)
        return np.linalg.solve(Lc.T, y)
    raise np.linalg.LinAlgError("Newton system is not positive definite")
