"""Basis functions on the K-simplex used to build the tested moments.

Two families are available:

* Bernstein polynomials ``(s! / prod j_k!) prod a_k ** j_k``, grouped by
  ascending degree ``s``. Within a degree the multi-indices run in
  lexicographically descending order. On the simplex ``a_K = 1 - sum a_k``,
  so many of these polynomials are affine combinations of the ones before
  them. Such a term adds nothing to the moment vector and makes its
  covariance singular. By default it is skipped (``independent=True``); pass
  ``independent=False`` to get the unfiltered list, where only ``a_K`` is
  dropped from degree one.
* Indicator contrasts (K = 2 only): the range of ``c_1`` is cut into ``p + 1``
  regions of equal model probability, and region ``j`` is mapped to the row
  ``sqrt(p + 1) * H[j]`` of an orthonormal basis ``H`` of the complement of the
  constant vector. Under the equiprobable region law the resulting p-vector
  has mean zero and identity covariance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from . import kernels
from .errors import ConfigurationError, DataValidationError, DegeneratePartitionError, UnsupportedError

SIMPLEX_TOL = 1e-8
KINDS = ("bernstein", "indicator_pca")


@dataclass(frozen=True)
class BasisSet:
    """p scalar functions on the K-simplex.

    For ``bernstein`` the functions are ``coefs[j] * prod_k a_k ** exponents[j, k]``.
    For ``indicator_pca`` the point's region is located by ``cutpoints`` on
    its first coordinate and the function values are the matching row of
    ``contrasts`` (shape ``(p + 1, p)``).
    """

    kind: str
    K: int
    p: int
    exponents: Optional[np.ndarray] = None
    coefs: Optional[np.ndarray] = None
    cutpoints: Optional[np.ndarray] = None
    contrasts: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown basis kind {self.kind!r}")
        for name in ("exponents", "coefs", "cutpoints", "contrasts"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.array(arr, dtype=np.int64 if name == "exponents" else float)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)

    def describe(self) -> str:
        if self.kind == "bernstein":
            terms = []
            for c, e in zip(self.coefs, self.exponents):
                mono = "*".join(
                    f"a{k + 1}" + (f"^{int(v)}" if v > 1 else "") for k, v in enumerate(e) if v
                )
                terms.append(mono if c == 1 else f"{c:g}*{mono}")
            return "bernstein[" + ", ".join(terms) + "]"
        return f"indicator_pca[p={self.p}, cutpoints={self.cutpoints.tolist()}]"


def _compositions(s: int, K: int):
    # exponent vectors of total degree s in lexicographically descending order
    if K == 1:
        yield (s,)
        return
    for first in range(s, -1, -1):
        for rest in _compositions(s - first, K - 1):
            yield (first,) + rest


def _multinomial(exps) -> int:
    out = math.factorial(sum(exps))
    for e in exps:
        out //= math.factorial(e)
    return out


def _reduced_poly(exps, coef):
    """Expand ``coef * prod a_k^e_k`` with ``a_K = 1 - sum_{k<K} a_k``.

    Returns a dict mapping exponent tuples over ``a_1..a_{K-1}`` to integer
    coefficients.
    """
    free, last = exps[:-1], exps[-1]
    m = len(free)
    poly = {}
    # (1 - a_1 - ... - a_m)^last by the multinomial theorem
    for comp in _compositions(last, m + 1):
        c = _multinomial(comp) * (-1) ** (last - comp[0])
        mono = tuple(f + x for f, x in zip(free, comp[1:]))
        poly[mono] = poly.get(mono, 0) + coef * c
    return {k: v for k, v in poly.items() if v}


class _SpanTracker:
    """Exact incremental rank test over the rationals."""

    def __init__(self):
        self.rows = []  # (pivot monomial, reduced row)

    def _reduce(self, vec):
        vec = dict(vec)
        for pivot, row in self.rows:
            c = vec.get(pivot)
            if c:
                for mono, v in row.items():
                    nv = vec.get(mono, 0) - c * v
                    if nv:
                        vec[mono] = nv
                    else:
                        vec.pop(mono, None)
        return vec

    def add_if_independent(self, poly) -> bool:
        vec = self._reduce({k: Fraction(v) for k, v in poly.items()})
        if not vec:
            return False
        pivot = max(vec)
        lead = vec[pivot]
        row = {k: v / lead for k, v in vec.items()}
        # keep earlier rows reduced against the new pivot
        self.rows = [
            (pv, _axpy(r, row, -r[pivot]) if pivot in r else r) for pv, r in self.rows
        ]
        self.rows.append((pivot, row))
        return True


def _axpy(r, row, c):
    out = dict(r)
    for mono, v in row.items():
        nv = out.get(mono, 0) + c * v
        if nv:
            out[mono] = nv
        else:
            out.pop(mono, None)
    return out


def bernstein_basis(K: int, p: int, independent: bool = True) -> BasisSet:
    """First ``p`` Bernstein polynomials on the K-simplex, by ascending degree."""
    K, p = int(K), int(p)
    if K < 2:
        raise ConfigurationError(f"Bernstein basis needs K >= 2, got K={K}")
    if p < 1:
        raise ConfigurationError(f"basis size must be >= 1, got p={p}")
    exps, coefs = [], []
    tracker = _SpanTracker()
    tracker.add_if_independent({(0,) * (K - 1): 1})  # the constant
    degree = 0
    while len(exps) < p:
        degree += 1
        if independent and degree > p + 1:
            # cannot happen for K >= 2: a_1^s is always new
            raise ConfigurationError("could not assemble an independent Bernstein basis")
        for e in _compositions(degree, K):
            if len(exps) == p:
                break
            if degree == 1 and e[-1] == 1:
                continue
            coef = _multinomial(e)
            if independent and not tracker.add_if_independent(_reduced_poly(e, coef)):
                continue
            exps.append(e)
            coefs.append(float(coef))
    return BasisSet("bernstein", K, p, exponents=np.array(exps, dtype=np.int64), coefs=np.array(coefs))


def helmert_contrasts(m: int) -> np.ndarray:
    """``m x (m - 1)`` matrix with orthonormal columns orthogonal to ones."""
    H = np.zeros((m, m - 1))
    for j in range(1, m):
        H[:j, j - 1] = 1.0
        H[j, j - 1] = -float(j)
        H[:, j - 1] /= math.sqrt(j * (j + 1))
    return H


def indicator_basis(c1_samples, p: int, K: int = 2) -> BasisSet:
    """Equal-probability partition of ``c_1`` into ``p + 1`` regions.

    ``c1_samples`` are model-simulated values of the first posterior
    coordinate; the cut-points are their empirical quantiles at levels
    ``j / (p + 1)``.
    """
    if int(K) != 2:
        raise UnsupportedError("the indicator basis is only defined for K = 2")
    p = int(p)
    if p < 1:
        raise ConfigurationError(f"basis size must be >= 1, got p={p}")
    c1 = np.asarray(c1_samples, dtype=float).ravel()
    if c1.size < 10 * (p + 1):
        raise ConfigurationError(f"need at least {10 * (p + 1)} simulated posteriors, got {c1.size}")
    levels = np.arange(1, p + 1) / (p + 1)
    cuts = np.quantile(c1, levels, method="inverted_cdf")
    if np.any(np.diff(cuts) <= 0):
        raise DegeneratePartitionError(
            "posterior has atoms: equal-probability cut-points coincide " f"({cuts.tolist()})"
        )
    contrasts = math.sqrt(p + 1) * helmert_contrasts(p + 1)
    return BasisSet("indicator_pca", 2, p, cutpoints=cuts, contrasts=contrasts)


def regions(basis: BasisSet, c1) -> np.ndarray:
    """Region index of each ``c_1`` value; ties go to the lower region."""
    return np.searchsorted(basis.cutpoints, np.asarray(c1, dtype=float), side="left")


def evaluate_rows(basis: BasisSet, A) -> np.ndarray:
    """Evaluate the basis on every row of an (n, K) array of simplex points."""
    A = np.ascontiguousarray(A, dtype=float)
    if A.ndim != 2 or A.shape[1] != basis.K:
        raise ConfigurationError(f"expected points with {basis.K} coordinates, got shape {A.shape}")
    if basis.kind == "bernstein":
        return kernels.bernstein_eval(A, np.ascontiguousarray(basis.exponents), np.ascontiguousarray(basis.coefs))
    return basis.contrasts[regions(basis, A[:, 0])]


def evaluate(basis: BasisSet, point) -> np.ndarray:
    """Basis vector at one simplex point (checked to lie on the simplex)."""
    a = np.asarray(point, dtype=float)
    if a.ndim != 1 or a.shape[0] != basis.K:
        raise ConfigurationError(f"expected a point with {basis.K} coordinates, got shape {a.shape}")
    if np.any(a < -SIMPLEX_TOL) or abs(a.sum() - 1.0) > SIMPLEX_TOL:
        raise DataValidationError(f"point {a.tolist()} is not on the simplex")
    return evaluate_rows(basis, a[None, :])[0]


def basis_to_document(basis: BasisSet) -> dict:
    doc = {"format": "clustergof.basis", "version": 1, "kind": basis.kind, "K": basis.K, "p": basis.p}
    if basis.kind == "bernstein":
        doc["exponents"] = basis.exponents.tolist()
        doc["coefs"] = basis.coefs.tolist()
    else:
        doc["cutpoints"] = basis.cutpoints.tolist()
        doc["contrasts"] = basis.contrasts.tolist()
    return doc


def basis_from_document(doc: dict) -> BasisSet:
    if doc.get("format") != "clustergof.basis":
        raise DataValidationError("not a clustergof basis document")
    keys = ("exponents", "coefs") if doc["kind"] == "bernstein" else ("cutpoints", "contrasts")
    return BasisSet(doc["kind"], int(doc["K"]), int(doc["p"]), **{k: doc[k] for k in keys})

