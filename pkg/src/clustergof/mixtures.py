"""Finite mixture models: densities, posteriors, sampling, EM and BIC.

Parameters are stored as plain numpy arrays with a leading component axis.
The per-family layout of ``MixtureParams.components`` is

=====================  ===============================================
family                 component arrays
=====================  ===============================================
gaussian_diagonal      ``means`` (K, d), ``variances`` (K, d)
poisson_product        ``rates`` (K, d)
bernoulli_product      ``probs`` (K, d)
multinomial_product    ``probs`` (K, d, max categories), zero padded
gaussian_full          ``means`` (K, d), ``covariances`` (K, d, d)
student3_product       ``locations`` (K, d), ``scales`` (K, d)
log_gaussian_product   ``means`` (K, d), ``variances`` (K, d) of log x
gaussian_copula        ``means``, ``variances`` (K, d), ``correlations``
                       (K, d, d); marginals set by ``MixtureSpec.marginal``
=====================  ===============================================

Only the first four families can be fitted. Labels are 0-based throughout.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaln

from . import kernels
from .errors import (
    ConfigurationError,
    DataValidationError,
    EMConvergenceError,
    UnsupportedError,
)
from .numerics import normal_cdf, normal_quantile

FAMILIES = (
    "gaussian_diagonal",
    "poisson_product",
    "bernoulli_product",
    "multinomial_product",
    "gaussian_full",
    "student3_product",
    "log_gaussian_product",
    "gaussian_copula",
)
FITTABLE = frozenset(FAMILIES[:4])
COPULA_MARGINALS = ("gaussian", "log_gaussian")

_LOG_2PI = math.log(2.0 * math.pi)
# log of the t_3 normalising constant Gamma(2) / (Gamma(3/2) sqrt(3 pi))
_T3_LOGC = -gammaln(1.5) - 0.5 * math.log(3.0 * math.pi)
PROB_SMOOTHING = 1e-10


class NotPositiveDefiniteError(ConfigurationError):
    """A covariance or correlation matrix is not positive definite."""


@dataclass(frozen=True)
class MixtureSpec:
    """Model ``m = {K, F}``: family, component count and data shape."""

    family: str
    K: int
    d: int
    categories: Optional[tuple] = None
    marginal: Optional[str] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if int(self.K) < 1 or int(self.d) < 1:
            raise ConfigurationError(f"K and d must be >= 1, got K={self.K}, d={self.d}")
        if self.family == "multinomial_product":
            if self.categories is None or len(self.categories) != self.d:
                raise ConfigurationError("multinomial_product needs one category count per variable")
            if any(int(c) < 2 for c in self.categories):
                raise ConfigurationError("multinomial category counts must be >= 2")
            object.__setattr__(self, "categories", tuple(int(c) for c in self.categories))
        if self.family == "gaussian_copula":
            marginal = self.marginal or "gaussian"
            if marginal not in COPULA_MARGINALS:
                raise ConfigurationError(f"copula marginal must be one of {COPULA_MARGINALS}")
            object.__setattr__(self, "marginal", marginal)

    @property
    def fittable(self) -> bool:
        return self.family in FITTABLE

    def with_K(self, K: int) -> "MixtureSpec":
        return replace(self, K=int(K))

    def n_free_parameters(self) -> int:
        """Free parameter count used by BIC."""
        K, d = self.K, self.d
        if self.family == "gaussian_diagonal":
            per = 2 * d
        elif self.family in ("poisson_product", "bernoulli_product"):
            per = d
        elif self.family == "multinomial_product":
            per = sum(c - 1 for c in self.categories)
        else:
            raise UnsupportedError(f"{self.family} is generation-only; no parameter count")
        return (K - 1) + K * per


@dataclass
class MixtureParams:
    """Proportions on the simplex plus per-component parameter arrays."""

    proportions: np.ndarray
    components: dict

    def __post_init__(self):
        self.proportions = np.asarray(self.proportions, dtype=float)
        self.components = {k: np.asarray(v, dtype=float) for k, v in self.components.items()}

    def validate(self, spec: MixtureSpec) -> "MixtureParams":
        pi = self.proportions
        if pi.shape != (spec.K,):
            raise ConfigurationError(f"expected {spec.K} proportions, got shape {pi.shape}")
        if np.any(pi <= 0) or np.any(pi > 1) or abs(pi.sum() - 1.0) > 1e-12:
            if not (spec.K == 1 and pi[0] == 1.0):
                raise ConfigurationError("proportions must lie in (0, 1) and sum to one")
        need = _COMPONENT_KEYS[spec.family]
        missing = [k for k in need if k not in self.components]
        if missing:
            raise ConfigurationError(f"{spec.family} parameters missing {missing}")
        c = self.components
        K, d = spec.K, spec.d
        for key in need:
            arr = c[key]
            if arr.shape[:2] != (K, d) or not np.all(np.isfinite(arr)):
                raise ConfigurationError(f"component array {key!r} has shape {arr.shape}, expected ({K}, {d}, ...)")
        fam = spec.family
        if fam in ("gaussian_diagonal", "log_gaussian_product", "gaussian_copula"):
            if np.any(c["variances"] <= 0):
                raise ConfigurationError("variances must be positive")
        if fam == "poisson_product" and np.any(c["rates"] <= 0):
            raise ConfigurationError("Poisson rates must be positive")
        if fam == "bernoulli_product" and np.any((c["probs"] <= 0) | (c["probs"] >= 1)):
            raise ConfigurationError("Bernoulli probabilities must lie in (0, 1)")
        if fam == "student3_product" and np.any(c["scales"] <= 0):
            raise ConfigurationError("Student scales must be positive")
        if fam == "multinomial_product":
            P = c["probs"]
            for j, cj in enumerate(spec.categories):
                block = P[:, j, :cj]
                if np.any(block <= 0) or np.any(block >= 1) or np.any(np.abs(block.sum(1) - 1) > 1e-9):
                    raise ConfigurationError(f"category probabilities of variable {j} are invalid")
        if fam in ("gaussian_full", "gaussian_copula"):
            key = "covariances" if fam == "gaussian_full" else "correlations"
            for k in range(K):
                _cholesky(c[key][k], f"{key}[{k}]")
        return self

    def copy(self) -> "MixtureParams":
        return MixtureParams(self.proportions.copy(), {k: v.copy() for k, v in self.components.items()})


_COMPONENT_KEYS = {
    "gaussian_diagonal": ("means", "variances"),
    "poisson_product": ("rates",),
    "bernoulli_product": ("probs",),
    "multinomial_product": ("probs",),
    "gaussian_full": ("means", "covariances"),
    "student3_product": ("locations", "scales"),
    "log_gaussian_product": ("means", "variances"),
    "gaussian_copula": ("means", "variances", "correlations"),
}


@dataclass
class Dataset:
    """``n x d`` observations with optional 0-based generating labels."""

    X: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 2:
            raise DataValidationError("data must be a two-dimensional array")
        if not np.all(np.isfinite(self.X)):
            bad = int(np.nonzero(~np.all(np.isfinite(self.X), axis=1))[0][0])
            raise DataValidationError(f"non-finite entry in row {bad}")

    @property
    def n(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class FitResult:
    """Outcome of EM: best parameters and diagnostics of the winning start."""

    spec: MixtureSpec
    params: MixtureParams
    loglik_trace: np.ndarray
    n_iterations: int
    converged: bool
    bic: float
    n_obs: int
    bic_table: dict = field(default_factory=dict)

    @property
    def loglik(self) -> float:
        return float(self.loglik_trace[-1])


def _cholesky(S, name="matrix"):
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError(f"{name} is not positive definite") from None


def ar1_correlation(d: int, c: float) -> np.ndarray:
    """Correlation matrix with entries ``c ** |j - j'|``."""
    idx = np.arange(d)
    return float(c) ** np.abs(idx[:, None] - idx[None, :])


# --------------------------------------------------------------------------
# densities and posteriors
# --------------------------------------------------------------------------

def _check_X(spec, X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != spec.d:
        raise ConfigurationError(f"expected observations with {spec.d} columns, got shape {X.shape}")
    return X


def _mvn_logpdf_rows(Z, chol):
    # log N(z; 0, L L^T) for each row of Z
    sol = np.linalg.solve(chol, Z.T).T
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    return -0.5 * (Z.shape[1] * _LOG_2PI + logdet + (sol * sol).sum(axis=1))


def component_log_densities(spec: MixtureSpec, params: MixtureParams, X) -> np.ndarray:
    """``log f_k(x_i)`` for every row and component, shape (n, K)."""
    X = _check_X(spec, X)
    c = params.components
    fam = spec.family
    n, K = X.shape[0], spec.K
    if fam == "gaussian_diagonal":
        return kernels.gauss_diag_log_joint(
            np.ascontiguousarray(X), np.ascontiguousarray(c["means"]),
            np.ascontiguousarray(c["variances"]), np.zeros(K))
    if fam == "poisson_product":
        lr = np.log(c["rates"])
        inside = np.all((X >= 0) & (X == np.round(X)), axis=1)
        Xs = np.where(inside[:, None], X, 0.0)
        out = Xs @ lr.T - c["rates"].sum(axis=1) - gammaln(Xs + 1.0).sum(axis=1, keepdims=True)
        out[~inside] = -np.inf
        return out
    if fam == "bernoulli_product":
        p = c["probs"]
        inside = np.all((X == 0) | (X == 1), axis=1)
        with np.errstate(divide="ignore"):
            out = X @ np.log(p).T + (1.0 - X) @ np.log1p(-p).T
        out[~inside] = -np.inf
        return out
    if fam == "multinomial_product":
        codes = X.astype(np.int64)
        out = np.zeros((n, K))
        with np.errstate(divide="ignore"):
            logP = np.log(c["probs"])
        for j, cj in enumerate(spec.categories):
            col = codes[:, j]
            valid = (col >= 0) & (col < cj)
            out[~valid] = -np.inf
            out[valid] += logP[:, j, col[valid]].T
        return out
    if fam == "student3_product":
        s = c["scales"]
        out = np.empty((n, K))
        for k in range(K):
            t = (X - c["locations"][k]) / s[k]
            out[:, k] = (_T3_LOGC - np.log(s[k]) - 2.0 * np.log1p(t * t / 3.0)).sum(axis=1)
        return out
    if fam == "log_gaussian_product":
        with np.errstate(divide="ignore", invalid="ignore"):
            logx = np.where(X > 0, np.log(np.where(X > 0, X, 1.0)), np.nan)
        base = kernels.gauss_diag_log_joint(
            np.ascontiguousarray(np.nan_to_num(logx)), np.ascontiguousarray(c["means"]),
            np.ascontiguousarray(c["variances"]), np.zeros(K))
        out = base - np.nan_to_num(logx).sum(axis=1, keepdims=True)
        out[np.any(np.isnan(logx), axis=1)] = -np.inf
        return out
    if fam == "gaussian_full":
        out = np.empty((n, K))
        for k in range(K):
            out[:, k] = _mvn_logpdf_rows(X - c["means"][k], _cholesky(c["covariances"][k]))
        return out
    if fam == "gaussian_copula":
        if spec.marginal == "log_gaussian":
            positive = np.all(X > 0, axis=1)
            U = np.log(np.where(X > 0, X, 1.0))
            jac = -U.sum(axis=1)
        else:
            positive = np.ones(n, dtype=bool)
            U = X
            jac = np.zeros(n)
        out = np.empty((n, K))
        for k in range(K):
            sd = np.sqrt(c["variances"][k])
            Z = (U - c["means"][k]) / sd
            out[:, k] = _mvn_logpdf_rows(Z, _cholesky(c["correlations"][k])) - np.log(sd).sum() + jac
        out[~positive] = -np.inf
        return out
    raise UnsupportedError(fam)


def log_joint(spec: MixtureSpec, params: MixtureParams, X) -> np.ndarray:
    """``log pi_k + log f_k(x_i)``, shape (n, K)."""
    with np.errstate(divide="ignore"):
        logpi = np.log(params.proportions)
    if spec.family == "gaussian_diagonal":
        c = params.components
        X = _check_X(spec, X)
        return kernels.gauss_diag_log_joint(
            np.ascontiguousarray(X), np.ascontiguousarray(c["means"]),
            np.ascontiguousarray(c["variances"]), logpi)
    return component_log_densities(spec, params, X) + logpi


def e_step(spec: MixtureSpec, params: MixtureParams, X):
    """Posterior matrix and per-row log mixture density."""
    L = np.ascontiguousarray(log_joint(spec, params, X))
    return kernels.normalize_log_rows(L)


def log_density_rows(spec: MixtureSpec, params: MixtureParams, X) -> np.ndarray:
    """``log g(x_i)`` for every row; ``-inf`` where every component vanishes."""
    return e_step(spec, params, X)[1]


def log_density(spec: MixtureSpec, params: MixtureParams, x) -> float:
    """Log mixture density at a single d-vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != spec.d:
        raise ConfigurationError(f"expected a vector of length {spec.d}, got shape {x.shape}")
    value = float(log_density_rows(spec, params, x[None, :])[0])
    if value == -math.inf:
        warnings.warn("all component densities vanish at this point", RuntimeWarning, stacklevel=2)
    return value


def posteriors(spec: MixtureSpec, params: MixtureParams, X) -> np.ndarray:
    """Posterior classification probabilities, one simplex row per observation."""
    post, lse = e_step(spec, params, X)
    bad = np.nonzero(~np.isfinite(lse))[0]
    if bad.size:
        raise DataValidationError(f"all component densities vanish at row {int(bad[0])}")
    return post


def posterior(spec: MixtureSpec, params: MixtureParams, x) -> np.ndarray:
    """Posterior classification probabilities of a single observation."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != spec.d:
        raise ConfigurationError(f"expected a vector of length {spec.d}, got shape {x.shape}")
    return posteriors(spec, params, x[None, :])[0]


# --------------------------------------------------------------------------
# sampling
# --------------------------------------------------------------------------

def sample(spec: MixtureSpec, params: MixtureParams, n: int, rng: np.random.Generator) -> Dataset:
    """Draw ``n`` i.i.d. observations with their generating labels."""
    n = int(n)
    if n < 1:
        raise ConfigurationError("sample size must be positive")
    c = params.components
    K, d = spec.K, spec.d
    labels = rng.choice(K, size=n, p=params.proportions) if K > 1 else np.zeros(n, dtype=np.int64)
    fam = spec.family
    if fam == "gaussian_diagonal":
        X = c["means"][labels] + np.sqrt(c["variances"][labels]) * rng.standard_normal((n, d))
    elif fam == "poisson_product":
        X = rng.poisson(c["rates"][labels]).astype(float)
    elif fam == "bernoulli_product":
        X = (rng.random((n, d)) < c["probs"][labels]).astype(float)
    elif fam == "multinomial_product":
        X = np.empty((n, d))
        u = rng.random((n, d))
        for j, cj in enumerate(spec.categories):
            cum = np.cumsum(c["probs"][:, j, :cj], axis=1)[labels]
            X[:, j] = np.minimum((u[:, j:j + 1] >= cum).sum(axis=1), cj - 1)
    elif fam == "gaussian_full":
        Z = rng.standard_normal((n, d))
        X = np.empty((n, d))
        for k in range(K):
            idx = labels == k
            L = _cholesky(c["covariances"][k], f"covariances[{k}]")
            X[idx] = c["means"][k] + Z[idx] @ L.T
    elif fam == "student3_product":
        z = rng.standard_normal((n, d))
        w = rng.chisquare(3.0, size=(n, d))
        X = c["locations"][labels] + c["scales"][labels] * z / np.sqrt(w / 3.0)
    elif fam == "log_gaussian_product":
        X = np.exp(c["means"][labels] + np.sqrt(c["variances"][labels]) * rng.standard_normal((n, d)))
    elif fam == "gaussian_copula":
        Z = rng.standard_normal((n, d))
        G = np.empty((n, d))
        for k in range(K):
            idx = labels == k
            L = _cholesky(c["correlations"][k], f"correlations[{k}]")
            G[idx] = Z[idx] @ L.T
        U = np.clip(normal_cdf(G), 1e-300, 1.0 - 2.0**-53)
        X = c["means"][labels] + np.sqrt(c["variances"][labels]) * normal_quantile(U)
        if spec.marginal == "log_gaussian":
            X = np.exp(X)
    else:  # pragma: no cover - guarded by MixtureSpec
        raise UnsupportedError(fam)
    return Dataset(X, labels.astype(np.int64))


# --------------------------------------------------------------------------
# EM
# --------------------------------------------------------------------------

class _Degenerate(Exception):
    pass


def _m_step(spec, X, resp, floors):
    n = X.shape[0]
    Nk = resp.sum(axis=0)
    pi = Nk / n
    if np.any(pi < floors["proportion"]):
        raise _Degenerate("vanishing proportion")
    fam = spec.family
    if fam == "gaussian_diagonal":
        means = (resp.T @ X) / Nk[:, None]
        var = np.empty_like(means)
        for k in range(spec.K):
            diff = X - means[k]
            var[k] = resp[:, k] @ (diff * diff) / Nk[k]
        if np.any(var < floors["variance"]):
            raise _Degenerate("variance below floor")
        comps = {"means": means, "variances": var}
    elif fam == "poisson_product":
        rates = np.maximum((resp.T @ X) / Nk[:, None], PROB_SMOOTHING)
        comps = {"rates": rates}
    elif fam == "bernoulli_product":
        probs = np.clip((resp.T @ X) / Nk[:, None], PROB_SMOOTHING, 1.0 - PROB_SMOOTHING)
        comps = {"probs": probs}
    elif fam == "multinomial_product":
        cmax = max(spec.categories)
        P = np.zeros((spec.K, spec.d, cmax))
        codes = X.astype(np.int64)
        for j, cj in enumerate(spec.categories):
            onehot = np.zeros((n, cj))
            onehot[np.arange(n), codes[:, j]] = 1.0
            counts = resp.T @ onehot + PROB_SMOOTHING
            P[:, j, :cj] = counts / counts.sum(axis=1, keepdims=True)
        comps = {"probs": P}
    else:  # pragma: no cover
        raise UnsupportedError(fam)
    return MixtureParams(pi, comps)


def _random_posterior(rng, X, K):
    # Hard posteriors from K random seed observations. Purely random rows
    # would average out over n and hand every component the same M-step,
    # which is a fixed point of EM.
    n = X.shape[0]
    scale = X.std(axis=0)
    Z = X / np.where(scale > 0, scale, 1.0)
    _, first = np.unique(Z, axis=0, return_index=True)
    pool = first if first.size >= K else np.arange(n)
    seeds = Z[rng.choice(pool, size=K, replace=False)]
    D = ((Z[:, None, :] - seeds[None, :, :]) ** 2).sum(axis=2)
    D += 1e-9 * rng.random(D.shape)
    resp = np.zeros((n, K))
    resp[np.arange(n), D.argmin(axis=1)] = 1.0
    return resp


def _validate_data_for_family(spec, X):
    fam = spec.family
    if fam in ("poisson_product", "bernoulli_product", "multinomial_product"):
        if np.any(X != np.round(X)) or np.any(X < 0):
            raise DataValidationError(f"{fam} needs non-negative integer data")
    if fam == "bernoulli_product" and np.any(X > 1):
        raise DataValidationError("bernoulli_product needs 0/1 data")
    if fam == "multinomial_product":
        over = X >= np.asarray(spec.categories)[None, :]
        if np.any(over):
            i, j = np.argwhere(over)[0]
            raise DataValidationError(f"row {i}, variable {j}: category code exceeds declared count")


def _run_em(spec, X, resp0, tol, max_iter, floors):
    params = _m_step(spec, X, resp0, floors)
    trace = []
    converged = False
    it = 0
    for it in range(max_iter):
        post, lse = e_step(spec, params, X)
        ll = float(lse.sum())
        if not math.isfinite(ll):
            raise _Degenerate("non-finite log-likelihood")
        trace.append(ll)
        if it > 0 and abs(ll - trace[-2]) <= tol * abs(ll):
            converged = True
            break
        params = _m_step(spec, X, post, floors)
    return params, np.asarray(trace), it, converged


def fit_em(
    spec: MixtureSpec,
    X,
    K: Optional[int] = None,
    init_strategy: str = "random_posterior",
    n_starts: int = 20,
    tol: float = 1e-8,
    max_iter: int = 500,
    rng: Optional[np.random.Generator] = None,
    max_restarts: int = 10,
    short_iter: int = 10,
) -> FitResult:
    """Maximum-likelihood EM with several random starts.

    Each start picks K distinct random observations as seeds, assigns every
    row to its nearest seed (standardized distance), applies an M-step and
    iterates until the relative log-likelihood change drops below ``tol``
    or ``max_iter`` is reached. A start whose M-step produces a proportion
    below ``1/(10n)`` or a variance below ``1e-6`` times the column variance is
    restarted from a fresh draw. The start with the highest final
    log-likelihood wins.

    ``init_strategy="short_em"`` runs every start for ``short_iter`` iterations
    only and continues the best one to convergence.
    """
    if K is not None:
        spec = spec.with_K(K)
    if not spec.fittable:
        raise UnsupportedError(f"{spec.family} is generation-only and cannot be fitted")
    if init_strategy not in ("random_posterior", "short_em"):
        raise ConfigurationError(f"unknown init_strategy {init_strategy!r}")
    X = _check_X(spec, X.X if isinstance(X, Dataset) else X)
    n = X.shape[0]
    if n <= spec.K:
        raise ConfigurationError(f"EM needs more observations than components (n={n}, K={spec.K})")
    _validate_data_for_family(spec, X)
    rng = rng if rng is not None else np.random.default_rng()
    col_var = X.var(axis=0)
    floors = {
        "proportion": 1.0 / (10.0 * n),
        "variance": 1e-6 * np.where(col_var > 0, col_var, 1.0),
    }
    seeds = rng.integers(0, 2**63, size=max(int(n_starts), 1))

    def attempt(seed, iters):
        srng = np.random.default_rng(seed)
        for _ in range(max_restarts + 1):
            resp0 = _random_posterior(srng, X, spec.K)
            try:
                return _run_em(spec, X, resp0, tol, iters, floors)
            except _Degenerate:
                continue
        return None

    runs = []
    for seed in seeds:
        out = attempt(seed, short_iter if init_strategy == "short_em" else max_iter)
        if out is not None:
            runs.append(out)
    if not runs:
        raise EMConvergenceError("every EM start degenerated", best=None)
    best = max(runs, key=lambda r: r[1][-1])
    if init_strategy == "short_em" and not best[3]:
        try:
            cont = _continue_em(spec, X, best[0], tol, max_iter, floors)
            best = (cont[0], np.concatenate([best[1], cont[1]]), best[2] + cont[2], cont[3])
        except _Degenerate:
            pass
    params, trace, it, converged = best
    result = FitResult(
        spec=spec,
        params=params,
        loglik_trace=trace,
        n_iterations=int(it),
        converged=bool(converged),
        bic=float(trace[-1] - 0.5 * spec.n_free_parameters() * math.log(n)),
        n_obs=n,
    )
    if not any(r[3] for r in runs) and not converged:
        raise EMConvergenceError(f"no EM start converged within {max_iter} iterations", best=result)
    return result


def _continue_em(spec, X, params, tol, max_iter, floors):
    post, lse = e_step(spec, params, X)
    trace = [float(lse.sum())]
    converged = False
    it = 0
    for it in range(max_iter):
        params = _m_step(spec, X, post, floors)
        post, lse = e_step(spec, params, X)
        trace.append(float(lse.sum()))
        if abs(trace[-1] - trace[-2]) <= tol * abs(trace[-1]):
            converged = True
            break
    return params, np.asarray(trace[1:]), it + 1, converged


def bic(fit: FitResult, n: Optional[int] = None) -> float:
    """``logL - (nu / 2) log n``; larger is better."""
    n = fit.n_obs if n is None else int(n)
    return float(fit.loglik - 0.5 * fit.spec.n_free_parameters() * math.log(n))


def select_K(spec: MixtureSpec, X, K_range: Sequence[int], **em_settings) -> FitResult:
    """Fit every K in ``K_range`` and keep the largest BIC (ties: smaller K).

    A K whose starts all stop at ``max_iter`` competes with its best partial
    fit and a warning is issued; a K whose starts all degenerate raises.
    """
    K_values = sorted(set(int(k) for k in K_range))
    if not K_values:
        raise ConfigurationError("K_range must not be empty")
    rng = em_settings.pop("rng", None) or np.random.default_rng()
    seeds = rng.integers(0, 2**63, size=len(K_values))
    best = None
    table = {}
    for K, seed in zip(K_values, seeds):
        try:
            fit = fit_em(spec, X, K=K, rng=np.random.default_rng(seed), **em_settings)
        except EMConvergenceError as err:
            # over-fitted K often crawls past max_iter; its best partial fit
            # still has a valid (lower) likelihood, so it can compete
            if err.best is None:
                raise
            warnings.warn(f"K={K}: {err}; using the best partial fit", RuntimeWarning, stacklevel=2)
            fit = err.best
        table[K] = fit.bic
        if best is None or fit.bic > best.bic:
            best = fit
    return replace(best, bic_table=table)


def align_labels(estimated_means, true_means) -> np.ndarray:
    """Greedy matching of components on their means.

    Returns ``perm`` with ``estimated[perm[k]]`` matched to ``true[k]``.
    """
    est = np.asarray(estimated_means, dtype=float)
    tru = np.asarray(true_means, dtype=float)
    D = ((tru[:, None, :] - est[None, :, :]) ** 2).sum(axis=2)
    K = D.shape[0]
    perm = np.full(K, -1)
    used_t, used_e = set(), set()
    for flat in np.argsort(D, axis=None):
        t, e = divmod(int(flat), K)
        if t in used_t or e in used_e:
            continue
        perm[t] = e
        used_t.add(t)
        used_e.add(e)
    return perm


# --------------------------------------------------------------------------
# parameter documents
# --------------------------------------------------------------------------

DOCUMENT_FORMAT = "clustergof.mixture"


def params_to_document(spec: MixtureSpec, params: MixtureParams) -> dict:
    """Self-describing key/value tree; floats keep their exact value."""
    comps = {}
    for key, arr in params.components.items():
        if spec.family == "multinomial_product" and key == "probs":
            comps[key] = [
                [arr[k, j, :cj].tolist() for j, cj in enumerate(spec.categories)]
                for k in range(spec.K)
            ]
        else:
            comps[key] = arr.tolist()
    doc = {
        "format": DOCUMENT_FORMAT,
        "version": 1,
        "family": spec.family,
        "K": spec.K,
        "d": spec.d,
        "proportions": params.proportions.tolist(),
        "components": comps,
    }
    if spec.categories is not None:
        doc["categories"] = list(spec.categories)
    if spec.marginal is not None:
        doc["marginal"] = spec.marginal
    return doc


def params_from_document(doc: dict):
    """Inverse of :func:`params_to_document`; returns ``(spec, params)``."""
    if doc.get("format") != DOCUMENT_FORMAT:
        raise DataValidationError("not a clustergof mixture document")
    spec = MixtureSpec(doc["family"], int(doc["K"]), int(doc["d"]),
                       categories=tuple(doc["categories"]) if "categories" in doc else None,
                       marginal=doc.get("marginal"))
    comps = {}
    for key, val in doc["components"].items():
        if spec.family == "multinomial_product" and key == "probs":
            P = np.zeros((spec.K, spec.d, max(spec.categories)))
            for k in range(spec.K):
                for j, cj in enumerate(spec.categories):
                    P[k, j, :cj] = val[k][j]
            comps[key] = P
        else:
            comps[key] = np.asarray(val, dtype=float)
    params = MixtureParams(np.asarray(doc["proportions"], dtype=float), comps)
    return spec, params.validate(spec)


def save_params(path, spec: MixtureSpec, params: MixtureParams) -> None:
    with open(path, "w") as fh:
        json.dump(params_to_document(spec, params), fh, indent=1)
        fh.write("\n")


def load_params(path):
    with open(path) as fh:
        return params_from_document(json.load(fh))
