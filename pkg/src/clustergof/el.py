"""Empirical likelihood for a block of moment vectors.

The multiplier ``lam`` maximises the dual ``sum_i log*(1 + lam' psi_i)`` where
``log*`` is the logarithm continued quadratically below ``1/n``. At the
optimum the weights are ``xi_i = 1 / (n (1 + lam' psi_i))`` and the log ratio
is ``R = sum_i log(1 + lam' psi_i)``. When the origin is outside the convex
hull of the rows the ratio is infinite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigurationError, DataValidationError

CONVERGED = "converged"
HULL_VIOLATION = "hull_violation"
MAX_ITER = "max_iter"

_STATUS = {
    kernels.EL_CONVERGED: CONVERGED,
    kernels.EL_MAX_ITER: MAX_ITER,
    kernels.EL_SEPARATED: HULL_VIOLATION,
}


@dataclass(frozen=True)
class ElSolution:
    lam: np.ndarray
    log_ratio: float
    statistic: float
    weights: np.ndarray
    status: str
    n_iter: int
    dual_trace: np.ndarray

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


def _check(Psi) -> np.ndarray:
    Psi = np.asarray(Psi, dtype=float)
    if Psi.ndim == 1:
        Psi = Psi[:, None]
    if Psi.ndim != 2 or Psi.shape[1] < 1:
        raise ConfigurationError(f"moment matrix must be n x p with p >= 1, got shape {Psi.shape}")
    if not np.all(np.isfinite(Psi)):
        raise DataValidationError("moment matrix has non-finite entries")
    if Psi.shape[0] < 2:
        raise ConfigurationError("moment matrix needs at least two rows")
    return np.ascontiguousarray(Psi)


def _infinite(Psi, lam, it, trace):
    n = Psi.shape[0]
    return ElSolution(lam, math.inf, math.inf, np.full(n, np.nan), HULL_VIOLATION, it, trace)


def solve_lambda(Psi, tol: float = 1e-10, max_iter: int = 100) -> ElSolution:
    """Solve the EL dual for the rows of ``Psi`` (shape ``n x p``).

    ``tol`` bounds ``max |gradient| / n`` of the dual at the returned
    multiplier. Rows that all lie strictly on one side of some coordinate
    hyperplane, or a separating direction found by the Newton iteration,
    yield ``status == "hull_violation"`` and an infinite statistic.
    """
    Psi = _check(Psi)
    n, p = Psi.shape
    # quick certificate: a coordinate with one sign and not all zero
    lo, hi = Psi.min(axis=0), Psi.max(axis=0)
    if np.any(((lo >= 0) & (hi > 0)) | ((hi <= 0) & (lo < 0))):
        return _infinite(Psi, np.zeros(p), 0, np.zeros(1))
    lam, it, code, trace = kernels.el_dual_newton(Psi, float(tol), int(max_iter))
    status = _STATUS[int(code)]
    if status == HULL_VIOLATION:
        return _infinite(Psi, lam, it, trace)
    z = 1.0 + Psi @ lam
    if np.any(z < 1.0 / n):
        # the optimum sits in the extension region: origin on or outside the hull
        return _infinite(Psi, lam, it, trace)
    R = float(np.log(z).sum())
    weights = 1.0 / (n * z)
    return ElSolution(lam, R, 2.0 * R, weights, status, int(it), trace)


def el_statistic(Psi, tol: float = 1e-10, max_iter: int = 100) -> float:
    """Twice the EL log ratio, ``+inf`` on hull violation."""
    return solve_lambda(Psi, tol, max_iter).statistic
