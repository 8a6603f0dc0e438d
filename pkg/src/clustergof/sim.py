"""Scenario catalog and replicate engine for the simulation studies.

Scenario ids look like ``table2/gaussian/0.80`` or ``table4/log_gaussian/c0.75``;
:func:`scenario` combines an id with a sample size. Each replicate draws its
data, EM starts and test seed from streams keyed by
``(master seed, scenario id, n, replicate)``, so results do not depend on the
order or process in which replicates run.
"""

from __future__ import annotations

import csv
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigurationError, EMConvergenceError
from .gof import GofConfig, gof_test
from .mixtures import MixtureParams, MixtureSpec, ar1_correlation, fit_em, posteriors, sample
from .numerics import make_rng, stream_id

SAMPLE_SIZES = (512, 1000, 1728, 2744, 5832, 8000, 10648)

TABLE2_DELTAS = {
    "gaussian": {"0.80": 0.675, "0.85": 0.780, "0.90": 0.911},
    "poisson": {"0.80": 0.859, "0.85": 1.139, "0.90": 1.552},
    "bernoulli": {"0.80": 1.435, "0.85": 1.692, "0.90": 2.040},
}
ALTERNATIVE_DELTA = 0.675
FULL_COVARIANCE_CORRELATION = 0.7
COPULA_CS = (0.0, 0.25, 0.5, 0.75)
TABLE1_DIMS = (5, 10, 20)


def mean_pattern(delta: float) -> np.ndarray:
    """Three six-variate component centres built from one separation ``delta``."""
    base = np.array([
        [2, 1, 0, 2, 1, 0],
        [1, 0, 2, 1, 0, 2],
        [0, 2, 1, 0, 2, 1],
    ], dtype=float)
    return base * float(delta)


@dataclass(frozen=True)
class ScenarioTemplate:
    """A catalog row before the sample size is chosen."""

    scenario_id: str
    generator: MixtureSpec
    params: MixtureParams
    fit_spec: MixtureSpec
    basis: str = "bernstein"
    delta: Optional[float] = None
    transform: Optional[str] = None
    description: str = ""


@dataclass(frozen=True)
class ScenarioConfig:
    template: ScenarioTemplate
    n: int
    gof: GofConfig = GofConfig()

    @property
    def scenario_id(self) -> str:
        return self.template.scenario_id


@dataclass
class SimResult:
    scenario_id: str
    n: int
    N: int
    rejections: int
    completed: int
    em_failures: int
    replicate_seeds: list
    records: list
    wall_time: float = field(default=0.0, compare=False)

    @property
    def proportion(self) -> float:
        """Rejections over replicates that completed (EM failures excluded)."""
        return self.rejections / self.completed if self.completed else math.nan

    @property
    def standard_error(self) -> float:
        p = self.proportion
        return math.sqrt(p * (1 - p) / self.completed) if self.completed else math.nan


def _gauss_params(means, var=1.0):
    means = np.asarray(means, dtype=float)
    K = means.shape[0]
    return MixtureParams(np.full(K, 1.0 / K), {"means": means, "variances": np.full(means.shape, var)})


def _build_catalog():
    cat = {}

    def add(t: ScenarioTemplate):
        cat[t.scenario_id] = t

    # basis comparison: two components, centres +-1/sqrt(d)
    for basis in ("indicator", "bernstein"):
        kind = "indicator_pca" if basis == "indicator" else "bernstein"
        for d in TABLE1_DIMS:
            mu = np.vstack([np.ones(d), -np.ones(d)]) / math.sqrt(d)
            fit = MixtureSpec("gaussian_diagonal", 2, d)
            add(ScenarioTemplate(f"table1/{basis}/gaussian/d{d}", fit, _gauss_params(mu), fit, kind,
                                 description="Gaussian components, null"))
            gen = MixtureSpec("student3_product", 2, d)
            par = MixtureParams(np.full(2, 0.5), {"locations": mu, "scales": np.ones((2, d))})
            add(ScenarioTemplate(f"table1/{basis}/student/d{d}", gen, par, fit, kind,
                                 description="Student t3 components, alternative"))

    # null levels for three parametric families
    for fam, deltas in TABLE2_DELTAS.items():
        for rate, delta in deltas.items():
            mu = mean_pattern(delta)
            if fam == "gaussian":
                spec = MixtureSpec("gaussian_diagonal", 3, 6)
                par = _gauss_params(mu)
            elif fam == "poisson":
                spec = MixtureSpec("poisson_product", 3, 6)
                par = MixtureParams(np.full(3, 1 / 3), {"rates": mu + delta})
            else:
                spec = MixtureSpec("bernoulli_product", 3, 6)
                par = MixtureParams(np.full(3, 1 / 3), {"probs": 1.0 / (1.0 + np.exp(-(mu - delta)))})
            add(ScenarioTemplate(f"table2/{fam}/{rate}", spec, par, spec, delta=delta,
                                 description=f"{fam} mixture, classification rate {rate}"))

    # alternatives fitted by a diagonal Gaussian mixture
    mu = mean_pattern(ALTERNATIVE_DELTA)
    fit = MixtureSpec("gaussian_diagonal", 3, 6)
    R = ar1_correlation(6, FULL_COVARIANCE_CORRELATION)
    add(ScenarioTemplate(
        "table3/gaussian_full", MixtureSpec("gaussian_full", 3, 6),
        MixtureParams(np.full(3, 1 / 3), {"means": mu, "covariances": np.stack([R] * 3)}),
        fit, delta=ALTERNATIVE_DELTA, description="Gaussian with full AR covariance"))
    add(ScenarioTemplate(
        "table3/log_gaussian", MixtureSpec("log_gaussian_product", 3, 6), _gauss_params(mu),
        fit, delta=ALTERNATIVE_DELTA, description="products of log-Gaussian marginals"))
    add(ScenarioTemplate(
        "table3/student3", MixtureSpec("student3_product", 3, 6),
        MixtureParams(np.full(3, 1 / 3), {"locations": mu, "scales": np.ones((3, 6))}),
        fit, delta=ALTERNATIVE_DELTA, description="products of Student t3 marginals"))

    # Gaussian copulas; fitted by a diagonal Gaussian mixture (on log x for log marginals)
    for marginal in ("gaussian", "log_gaussian"):
        for c in COPULA_CS:
            gen = MixtureSpec("gaussian_copula", 3, 6, marginal=marginal)
            corr = np.stack([ar1_correlation(6, c)] * 3)
            par = MixtureParams(np.full(3, 1 / 3), {
                "means": mu, "variances": np.ones((3, 6)), "correlations": corr})
            add(ScenarioTemplate(
                f"table4/{marginal}/c{c:.2f}", gen, par, fit, delta=ALTERNATIVE_DELTA,
                transform="log" if marginal == "log_gaussian" else None,
                description=f"Gaussian copula c={c}, {marginal} marginals"))
    return cat


_CATALOG = None


def scenario_catalog() -> dict:
    """All catalog rows keyed by scenario id."""
    global _CATALOG
    if _CATALOG is None:
        _CATALOG = _build_catalog()
    return dict(_CATALOG)


def _normalise_id(scenario_id: str) -> str:
    parts = scenario_id.strip("/").split("/")
    if parts and parts[0] == "table4" and len(parts) == 3 and parts[2].startswith("c"):
        try:
            parts[2] = f"c{float(parts[2][1:]):.2f}"
        except ValueError:
            pass
    return "/".join(parts)


def scenario(scenario_id: str, n: int, gof: Optional[GofConfig] = None) -> ScenarioConfig:
    """Catalog row ``scenario_id`` at sample size ``n``."""
    cat = scenario_catalog()
    key = _normalise_id(scenario_id)
    if key not in cat:
        raise KeyError(f"unknown scenario {scenario_id!r}; known: {', '.join(sorted(cat))}")
    t = cat[key]
    if gof is None:
        gof = GofConfig(basis=t.basis)
    else:
        gof = replace(gof, basis=t.basis)
    if int(n) < 64:
        raise ConfigurationError("scenario sample size must be >= 64")
    return ScenarioConfig(t, int(n), gof)


def replicate_seed(master_seed: int, scenario_id: str, n: int, index: int) -> int:
    return stream_id("replicate", int(master_seed), scenario_id, int(n), int(index))


def run_replicate(cfg: ScenarioConfig, master_seed: int, index: int, em_settings: Optional[dict] = None) -> dict:
    """Generate, fit and test one replicate; never raises for EM failures."""
    t = cfg.template
    seed = replicate_seed(master_seed, cfg.scenario_id, cfg.n, index)
    data = sample(t.generator, t.params, cfg.n, make_rng(seed, "data"))
    X = np.log(data.X) if t.transform == "log" else data.X
    settings = dict(em_settings or {})
    try:
        fit = fit_em(t.fit_spec, X, rng=make_rng(seed, "em"), **settings)
    except EMConvergenceError as exc:
        return {"index": index, "seed": seed, "status": "em_failed", "reason": str(exc)}
    report = gof_test(X, fit.spec, fit.params, replace(cfg.gof, seed=seed))
    return {
        "index": index,
        "seed": seed,
        "status": "ok",
        "reject": bool(report.reject),
        "max_statistic": report.max_statistic,
        "threshold": report.threshold,
        "loglik": fit.loglik,
    }


def _run_chunk(args):
    cfg, master_seed, indices, em_settings = args
    return [run_replicate(cfg, master_seed, i, em_settings) for i in indices]


def default_workers() -> int:
    env = os.environ.get("CLUSTERGOF_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigurationError(f"CLUSTERGOF_WORKERS must be an integer, got {env!r}") from None
    return 1


def run_scenario(cfg: ScenarioConfig, N: int, master_seed: int = 0, workers: Optional[int] = None,
                 em_settings: Optional[dict] = None) -> SimResult:
    """Run ``N`` replicates of a scenario and count rejections."""
    N = int(N)
    if N < 1:
        raise ConfigurationError("N must be >= 1")
    workers = default_workers() if workers is None else max(1, int(workers))
    t0 = time.perf_counter()
    if workers == 1:
        records = _run_chunk((cfg, master_seed, range(N), em_settings))
    else:
        chunks = [list(range(w, N, workers)) for w in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = ex.map(_run_chunk, [(cfg, master_seed, c, em_settings) for c in chunks if c])
            records = [r for part in parts for r in part]
    records.sort(key=lambda r: r["index"])
    ok = [r for r in records if r["status"] == "ok"]
    return SimResult(
        scenario_id=cfg.scenario_id,
        n=cfg.n,
        N=N,
        rejections=sum(r["reject"] for r in ok),
        completed=len(ok),
        em_failures=N - len(ok),
        replicate_seeds=[r["seed"] for r in records],
        records=records,
        wall_time=time.perf_counter() - t0,
    )


def estimate_classification_rate(spec: MixtureSpec, params: MixtureParams, M: int, rng: np.random.Generator) -> float:
    """Monte Carlo probability that the posterior argmax recovers the true label."""
    if spec.K == 1:
        return 1.0
    data = sample(spec, params, int(M), rng)
    post = posteriors(spec, params, data.X)
    return float(np.mean(np.argmax(post, axis=1) == data.labels))


RESULT_FIELDS = ("scenario", "n", "N", "completed", "em_failures", "rejections", "proportion", "se")


def result_row(res: SimResult) -> dict:
    return {
        "scenario": res.scenario_id,
        "n": res.n,
        "N": res.N,
        "completed": res.completed,
        "em_failures": res.em_failures,
        "rejections": res.rejections,
        "proportion": f"{res.proportion:.6g}",
        "se": f"{res.standard_error:.6g}",
    }


def write_results(path, results) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_FIELDS, lineterminator="\n")
        w.writeheader()
        for res in results:
            w.writerow(result_row(res))


REPLICATE_FIELDS = ("index", "seed", "status", "reject", "max_statistic", "threshold")


def write_replicates(path, res: SimResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPLICATE_FIELDS, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in res.records:
            row = dict(r)
            if "max_statistic" in row:
                row["max_statistic"] = repr(float(row["max_statistic"]))
                row["threshold"] = repr(float(row["threshold"]))
            w.writerow(row)
