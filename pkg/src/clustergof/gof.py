"""Block empirical-likelihood goodness-of-fit test for a fitted mixture.

The sample is split at random into ``B`` blocks. On each block the EL ratio
of the centred basis moments of the posterior probabilities is computed, and
the test rejects when the largest of the ``B`` statistics exceeds the
chi-square quantile at level ``alpha_n = 1 - (1 - alpha) ** (1 / B)``.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from . import basis as basis_mod
from . import el
from .errors import ConfigurationError, DataValidationError
from .mixtures import MixtureParams, MixtureSpec, posteriors as model_posteriors, sample
from .numerics import chi2_quantile, make_rng

POSTERIOR_TOL = 1e-6
MC_CHUNK = 25_000


@dataclass(frozen=True)
class GofConfig:
    """Level, tuning rules, Monte Carlo size, basis and seed of one test."""

    alpha: float = 0.05
    rho: float = 0.8
    block_coef: float = 4.0
    p_exponent: float = 1.0 / 9.0
    p_coef: float = 2.0
    mc_draws: int = 100_000
    basis: str = "bernstein"
    seed: int = 0
    el_tol: float = 1e-10
    el_max_iter: int = 100

    def __post_init__(self):
        if not 0.0 < self.alpha < 0.5:
            raise ConfigurationError(f"alpha must lie in (0, 0.5), got {self.alpha}")
        if not 2.0 / 3.0 < self.rho < 1.0:
            raise ConfigurationError(f"rho must lie in (2/3, 1), got {self.rho}")
        if self.block_coef <= 0 or self.p_coef <= 0 or self.p_exponent <= 0:
            raise ConfigurationError("tuning coefficients must be positive")
        if int(self.mc_draws) < 1000:
            raise ConfigurationError(f"at least 1000 Monte Carlo draws are required, got {self.mc_draws}")
        if self.basis not in basis_mod.KINDS:
            raise ConfigurationError(f"basis must be one of {basis_mod.KINDS}")


@dataclass(frozen=True)
class Tuning:
    B: int
    block_sizes: tuple
    p: int
    nominal_block_size: int


@dataclass(frozen=True)
class BlockPartition:
    B: int
    assignment: np.ndarray
    sizes: tuple

    def indices(self, b: int) -> np.ndarray:
        return np.nonzero(self.assignment == b)[0]


@dataclass
class GofReport:
    n: int
    K: int
    B: int
    p: int
    block_sizes: list
    statistics: np.ndarray
    statuses: list
    max_statistic: float
    alpha: float
    alpha_n: float
    threshold: float
    reject: bool
    basis: str
    basis_kind: str
    mc_draws: int
    mc_max_se: float
    centering: str
    seed: int
    timing: dict = field(default_factory=dict)

    def to_document(self, include_timing: bool = False) -> dict:
        doc = {
            "format": "clustergof.report",
            "version": 1,
            "n": self.n,
            "K": self.K,
            "B": self.B,
            "p": self.p,
            "block_sizes": list(self.block_sizes),
            "statistics": [_jsonable(v) for v in self.statistics],
            "statuses": list(self.statuses),
            "max_statistic": _jsonable(self.max_statistic),
            "alpha": self.alpha,
            "alpha_n": self.alpha_n,
            "threshold": self.threshold,
            "reject": bool(self.reject),
            "basis": self.basis,
            "basis_kind": self.basis_kind,
            "mc_draws": self.mc_draws,
            "mc_max_se": self.mc_max_se,
            "centering": self.centering,
            "seed": self.seed,
        }
        if include_timing:
            doc["timing"] = dict(self.timing)
        return doc


def _jsonable(v):
    v = float(v)
    return v if math.isfinite(v) else "inf"


def _exact_root_round(n: int, coef: Fraction, exp: Fraction) -> Optional[int]:
    # round(coef * n ** exp) for exp = 1/q with integer arithmetic, or None
    if exp.numerator != 1:
        return None
    q = exp.denominator
    B = max(1, int(round(float(coef) * n ** float(exp))) + 2)
    # largest B with B - 1/2 <= coef * n^(1/q)  <=>  (2B - 1)^q <= (2 coef)^q n
    bound = (2 * coef) ** q * n
    while B > 0 and Fraction(2 * B - 1) ** q > bound:
        B -= 1
    return B


def _exact_root_floor(n: int, coef: Fraction, exp: Fraction) -> Optional[int]:
    if exp.numerator != 1:
        return None
    q = exp.denominator
    p = int(float(coef) * n ** float(exp)) + 2
    bound = coef**q * n
    while p > 0 and Fraction(p) ** q > bound:
        p -= 1
    return p


def _as_fraction(x: float) -> Fraction:
    return Fraction(x).limit_denominator(1000)


def tuning(n: int, config: GofConfig = GofConfig()) -> Tuning:
    """Block count, block sizes and basis size for a sample of size ``n``.

    ``B = round(block_coef * n ** (1 - rho))`` (at least 2) and
    ``p = floor(p_coef * n ** p_exponent)``, capped so that ``p >= 1``,
    ``6 p < n_b`` and ``p < n_b`` for the smallest block. Roots are evaluated
    in exact arithmetic so boundary cases do not depend on rounding.
    """
    n = int(n)
    if n < 64:
        raise ConfigurationError(f"the test needs n >= 64, got n={n}")
    b_exp = _as_fraction(1.0 - config.rho)
    B = _exact_root_round(n, _as_fraction(config.block_coef), b_exp)
    if B is None:
        B = int(math.floor(config.block_coef * n ** (1.0 - config.rho) + 0.5))
    B = max(B, 2)
    p = _exact_root_floor(n, _as_fraction(config.p_coef), _as_fraction(config.p_exponent))
    if p is None:
        p = int(math.floor(config.p_coef * n**config.p_exponent))
    base, extra = divmod(n, B)
    sizes = tuple([base + 1] * extra + [base] * (B - extra))
    n_min = sizes[-1]
    p = min(p, math.ceil(n_min / 6) - 1, n_min - 1)
    if p < 1:
        raise ConfigurationError(f"n={n} is too small for B={B} blocks and p >= 1")
    nominal = int(math.floor(n**config.rho / config.block_coef + 0.5))
    return Tuning(B, sizes, int(p), nominal)


def partition_blocks(n: int, B: int, rng: np.random.Generator) -> BlockPartition:
    """Random permutation of ``0..n-1`` cut into ``B`` near-equal runs."""
    n, B = int(n), int(B)
    if B < 1 or 2 * B > n:
        raise ConfigurationError(f"cannot split n={n} into B={B} blocks of size >= 2")
    base, extra = divmod(n, B)
    sizes = [base + 1] * extra + [base] * (B - extra)
    perm = rng.permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    start = 0
    for b, s in enumerate(sizes):
        assignment[perm[start:start + s]] = b
        start += s
    return BlockPartition(B, assignment, tuple(sizes))


def simulate_posteriors(spec: MixtureSpec, params: MixtureParams, M: int, rng: np.random.Generator) -> np.ndarray:
    """Posteriors of ``M`` draws from the model itself."""
    out = np.empty((int(M), spec.K))
    start = 0
    while start < M:
        m = min(MC_CHUNK, M - start)
        X = sample(spec, params, m, rng).X
        out[start:start + m] = model_posteriors(spec, params, X)
        start += m
    return out


def _moments(basis, post) -> np.ndarray:
    if basis is None:
        raise ConfigurationError("a basis is required")
    return basis_mod.evaluate_rows(basis, post)


def mc_expectation(spec: MixtureSpec, params: MixtureParams, basis, M: int, rng: np.random.Generator):
    """Monte Carlo estimate of ``E[phi(c(X))]`` under the model and its standard errors."""
    M = int(M)
    if M < 1000:
        raise ConfigurationError(f"at least 1000 Monte Carlo draws are required, got {M}")
    total = np.zeros(basis.p)
    total_sq = np.zeros(basis.p)
    start = 0
    while start < M:
        m = min(MC_CHUNK, M - start)
        X = sample(spec, params, m, rng).X
        Phi = _moments(basis, model_posteriors(spec, params, X))
        total += Phi.sum(axis=0)
        total_sq += (Phi * Phi).sum(axis=0)
        start += m
    mean = total / M
    var = np.maximum(total_sq / M - mean * mean, 0.0)
    return mean, np.sqrt(var / M)


def reference_expectation(basis, reference_posteriors):
    """Centering vector from an externally simulated posterior sample."""
    Phi = _moments(basis, np.asarray(reference_posteriors, dtype=float))
    return Phi.mean(axis=0), Phi.std(axis=0) / math.sqrt(Phi.shape[0])


def moment_matrix(basis, center, X=None, spec=None, params=None, posteriors=None) -> np.ndarray:
    """Centred moments ``phi(c(x_i)) - center`` for every row.

    Either ``posteriors`` (an (n, K) matrix) or ``X`` with ``spec`` and
    ``params`` must be given.
    """
    if posteriors is None:
        if X is None or spec is None or params is None:
            raise ConfigurationError("pass posteriors, or data with spec and params")
        posteriors = model_posteriors(spec, params, X)
    else:
        posteriors = np.asarray(posteriors, dtype=float)
        if X is not None and np.shape(X)[0] != posteriors.shape[0]:
            raise ConfigurationError(
                f"posterior rows ({posteriors.shape[0]}) do not match data rows ({np.shape(X)[0]})"
            )
    if basis is None:
        # K = 1: every basis function is constant
        return np.zeros((posteriors.shape[0], len(center)))
    return _moments(basis, posteriors) - np.asarray(center)


def alpha_n(alpha: float, B: int) -> float:
    """Per-block level ``1 - (1 - alpha)^(1/B)``."""
    return -math.expm1(math.log1p(-alpha) / B)


def threshold(p: int, B: int, alpha: float):
    """``(alpha_n, q)`` where ``q`` is the chi-square(p) quantile at ``1 - alpha_n``."""
    a = alpha_n(alpha, B)
    return a, chi2_quantile(p, 1.0 - a)


def build_basis(config: GofConfig, K: int, p: int, c1_samples=None):
    if K == 1:
        return None
    if config.basis == "bernstein":
        return basis_mod.bernstein_basis(K, p)
    if c1_samples is None:
        raise ConfigurationError("the indicator basis needs simulated posteriors")
    return basis_mod.indicator_basis(c1_samples, p, K)


def gof_test(
    X,
    spec: MixtureSpec,
    params: Optional[MixtureParams] = None,
    config: GofConfig = GofConfig(),
    posteriors=None,
    reference_posteriors=None,
) -> GofReport:
    """Run the block EL test.

    Data posteriors come from ``posteriors`` when given, otherwise from
    ``params``. The centering expectation comes from ``reference_posteriors``
    (posteriors of a model-simulated sample) when given, otherwise from
    ``config.mc_draws`` draws of the model.
    """
    t0 = time.perf_counter()
    if posteriors is not None:
        post = validate_posteriors(posteriors)
        n, K = post.shape
        if X is not None and np.shape(X)[0] != n:
            raise ConfigurationError(f"posterior rows ({n}) do not match data rows ({np.shape(X)[0]})")
    else:
        if params is None:
            raise ConfigurationError("either params or posteriors must be supplied")
        post = model_posteriors(spec, params, X)
        n, K = post.shape
    if n == 0:
        raise ConfigurationError("empty data")
    tune = tuning(n, config)
    B, p = tune.B, tune.p
    part = partition_blocks(n, B, make_rng(config.seed, "partition"))
    if min(part.sizes) <= p:
        raise ConfigurationError(f"block size {min(part.sizes)} must exceed p={p}")

    if reference_posteriors is None and params is None:
        raise ConfigurationError("centering needs params or reference posteriors")
    ref = None if reference_posteriors is None else validate_posteriors(reference_posteriors)
    c1 = None
    if config.basis == "indicator_pca" and K > 1:
        c1 = ref[:, 0] if ref is not None else simulate_posteriors(
            spec, params, config.mc_draws, make_rng(config.seed, "basis"))[:, 0]
    basis = build_basis(config, K, p, c1)
    t1 = time.perf_counter()
    if basis is None:
        center, se, centering = np.zeros(p), np.zeros(p), "constant"
    elif ref is not None:
        center, se = reference_expectation(basis, ref)
        centering = f"reference sample ({ref.shape[0]} rows)"
    else:
        center, se = mc_expectation(spec, params, basis, config.mc_draws, make_rng(config.seed, "centering"))
        centering = f"monte carlo ({config.mc_draws} draws)"
    t2 = time.perf_counter()

    Psi = moment_matrix(basis, center, posteriors=post)
    stats = np.empty(B)
    statuses = []
    for b in range(B):
        sol = el.solve_lambda(Psi[part.indices(b)], config.el_tol, config.el_max_iter)
        stats[b] = sol.statistic
        statuses.append(sol.status)
    t3 = time.perf_counter()
    a_n, q = threshold(p, B, config.alpha)
    y_star = float(stats.max())
    return GofReport(
        n=n,
        K=K,
        B=B,
        p=p,
        block_sizes=list(part.sizes),
        statistics=stats,
        statuses=statuses,
        max_statistic=y_star,
        alpha=config.alpha,
        alpha_n=a_n,
        threshold=q,
        reject=bool(y_star > q),
        basis="constant (K=1)" if basis is None else basis.describe(),
        basis_kind=config.basis,
        mc_draws=int(config.mc_draws) if ref is None else int(ref.shape[0]),
        mc_max_se=float(se.max()) if len(se) else 0.0,
        centering=centering,
        seed=int(config.seed),
        timing={"setup": t1 - t0, "centering": t2 - t1, "blocks": t3 - t2},
    )


def qq_table(empirical, reference) -> np.ndarray:
    """Sorted ``empirical`` against equal-rank quantiles of ``reference``.

    Row ``i`` pairs the ``i``-th order statistic with the reference quantile
    at level ``(i - 1/2) / n``.
    """
    emp = np.sort(np.asarray(empirical, dtype=float))
    n = emp.size
    levels = (np.arange(1, n + 1) - 0.5) / n
    theo = np.quantile(np.asarray(reference, dtype=float), levels, method="inverted_cdf")
    return np.column_stack([emp, theo])


def qq_export(data_posteriors, spec: MixtureSpec, params: MixtureParams, component: int, M: int,
              rng: np.random.Generator) -> np.ndarray:
    """QQ table of posterior component ``component`` (1-based), data against model."""
    post = np.asarray(data_posteriors, dtype=float)
    k = int(component)
    if not 1 <= k <= spec.K:
        raise ConfigurationError(f"component must be in 1..{spec.K}, got {component}")
    sim = simulate_posteriors(spec, params, int(M), rng)
    return qq_table(post[:, k - 1], sim[:, k - 1])


# --------------------------------------------------------------------------
# files
# --------------------------------------------------------------------------

def validate_posteriors(P, tol: float = POSTERIOR_TOL) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[1] < 1:
        raise DataValidationError(f"posterior matrix must be n x K, got shape {P.shape}")
    bad = ~np.all(np.isfinite(P), axis=1)
    bad |= np.any(P < -tol, axis=1)
    with np.errstate(invalid="ignore"):
        bad |= np.abs(P.sum(axis=1) - 1.0) > tol
    if np.any(bad):
        rows = np.nonzero(bad)[0]
        shown = ", ".join(str(int(r) + 1) for r in rows[:10])
        more = "" if rows.size <= 10 else f" and {rows.size - 10} more"
        raise DataValidationError(f"posterior rows off the simplex: {shown}{more}")
    return P


def read_posteriors(path) -> np.ndarray:
    """Read a ``c1,...,cK`` delimited posterior file and validate it."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataValidationError(f"{path}: empty posterior file") from None
        K = len(header)
        if header != [f"c{k}" for k in range(1, K + 1)]:
            raise DataValidationError(f"{path}: header must be c1..cK, got {','.join(header)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != K:
                raise DataValidationError(f"{path}: line {lineno} has {len(row)} fields, expected {K}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise DataValidationError(f"{path}: line {lineno} is not numeric") from None
    if not rows:
        raise DataValidationError(f"{path}: no posterior rows")
    return validate_posteriors(np.array(rows))


def write_posteriors(path, P) -> None:
    P = np.asarray(P, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"c{k}" for k in range(1, P.shape[1] + 1)])
        for row in P:
            w.writerow([repr(float(v)) for v in row])


def write_qq(path, table) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["empirical", "theoretical"])
        for e, t in table:
            w.writerow([repr(float(e)), repr(float(t))])


def write_report(path, report: GofReport, include_timing: bool = False) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_document(include_timing), fh, indent=1)
        fh.write("\n")
