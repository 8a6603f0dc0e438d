"""Command-line interface: ``clustergof {fit,gof,simulate,quantile,qq,convert,replay}``.

Exit codes: 0 finished (a rejection is still a success), 2 usage or
configuration error, 3 data validation error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, datasets, gof, mixtures, sim
from .errors import (
    ConfigurationError,
    DataValidationError,
    DegeneratePartitionError,
    NumericalError,
    UnsupportedError,
)
from .numerics import make_rng

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _k_range(text: str):
    try:
        if ":" in text:
            lo, hi = text.split(":")
            ks = list(range(int(lo), int(hi) + 1))
        else:
            ks = [int(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid K range {text!r}; use 1:6 or 2,3,4") from None
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("K values must be >= 1")
    return ks


def _alpha(text: str) -> float:
    a = float(text)
    if not 0.0 < a < 0.5:
        raise argparse.ArgumentTypeError(f"alpha must lie in (0, 0.5), got {a}")
    return a


def _seed(text: str) -> int:
    s = int(text)
    if not 0 <= s < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return s


def _stem(path) -> Path:
    p = Path(path)
    return p.with_suffix("") if p.suffix else p


def _write_manifest(out_path, command, argv, inputs, outputs, seed, config):
    manifest = {
        "format": "clustergof.manifest",
        "version": __version__,
        "subcommand": command,
        "argv": list(argv),
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "seed": seed,
        "config": config,
    }
    path = Path(str(_stem(out_path)) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=1) + "\n")
    return path


def _load_data(path, transform=None):
    header, X = datasets.read_data(path)
    if transform == "log":
        if np.any(X <= 0):
            raise DataValidationError(f"{path}: log transform needs positive data")
        X = np.log(X)
    return header, X


def _categories(args, X):
    if args.categories:
        counts = datasets.read_categories(args.categories)
    elif datasets.sidecar_path(args.data).exists():
        counts = datasets.read_categories(datasets.sidecar_path(args.data))
    else:
        counts = tuple(int(c) for c in X.max(axis=0) + 1)
        print("note: no category declaration found; counts inferred from the data", file=sys.stderr)
    if len(counts) != X.shape[1]:
        raise DataValidationError(f"{len(counts)} category counts for {X.shape[1]} columns")
    return tuple(max(2, c) for c in counts)


def cmd_fit(args, argv):
    _, X = _load_data(args.data, args.transform)
    spec_kw = {}
    if args.family == "multinomial_product":
        spec_kw["categories"] = _categories(args, X)
    if args.family not in mixtures.FITTABLE:
        raise UsageError(f"family {args.family} cannot be fitted; choose one of {sorted(mixtures.FITTABLE)}")
    ks = args.K
    spec = mixtures.MixtureSpec(args.family, ks[0], X.shape[1], **spec_kw)
    em = dict(n_starts=args.n_starts, tol=args.tol, max_iter=args.max_iter, init_strategy=args.init_strategy)
    rng = make_rng(args.seed, "fit")
    if len(ks) == 1:
        fit = mixtures.fit_em(spec, X, K=ks[0], rng=rng, **em)
        table = {ks[0]: fit.bic}
    else:
        fit = mixtures.select_K(spec, X, ks, rng=rng, **em)
        table = fit.bic_table
    out = Path(args.out)
    mixtures.save_params(out, fit.spec, fit.params)
    bic_path = Path(str(_stem(out)) + ".bic.csv")
    with open(bic_path, "w") as fh:
        fh.write("K,bic\n")
        for K in sorted(table):
            fh.write(f"{K},{table[K]!r}\n")
    post_path = Path(args.posteriors_out) if args.posteriors_out else Path(str(_stem(out)) + ".posteriors.csv")
    gof.write_posteriors(post_path, mixtures.posteriors(fit.spec, fit.params, X))
    _write_manifest(out, "fit", argv, [args.data], [out, bic_path, post_path], args.seed,
                    {"family": args.family, "K": ks, **em, "transform": args.transform})
    print(f"selected K={fit.spec.K}  loglik={fit.loglik:.6f}  bic={fit.bic:.6f}  "
          f"iterations={fit.n_iterations}  converged={fit.converged}")
    return EXIT_OK


def cmd_gof(args, argv):
    header, X = _load_data(args.data, args.transform)
    config = gof.GofConfig(alpha=args.alpha, mc_draws=args.mc_draws, basis=args.basis, seed=args.seed)
    spec = params = post = ref = None
    inputs = [args.data]
    if args.params:
        spec, params = mixtures.load_params(args.params)
        inputs.append(args.params)
        if spec.d != X.shape[1]:
            raise DataValidationError(f"data has {X.shape[1]} columns, parameters expect {spec.d}")
    if args.posteriors:
        post = gof.read_posteriors(args.posteriors)
        inputs.append(args.posteriors)
    if args.reference_posteriors:
        ref = gof.read_posteriors(args.reference_posteriors)
        inputs.append(args.reference_posteriors)
    if params is None and post is None:
        raise UsageError("pass --params, or --posteriors with --reference-posteriors")
    if params is None and ref is None:
        raise UsageError("--posteriors without --params needs --reference-posteriors for centering")
    report = gof.gof_test(X, spec, params, config, posteriors=post, reference_posteriors=ref)
    out = Path(args.out)
    gof.write_report(out, report, include_timing=args.timing)
    _write_manifest(out, "gof", argv, inputs, [out], args.seed,
                    {"alpha": args.alpha, "mc_draws": args.mc_draws, "basis": args.basis,
                     "transform": args.transform})
    stat = "inf" if not np.isfinite(report.max_statistic) else f"{report.max_statistic:.6g}"
    print(f"B={report.B} p={report.p} max_statistic={stat} threshold={report.threshold:.6g} "
          f"reject={str(report.reject).lower()}")
    print(f"timing: {report.timing}", file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args, argv):
    if args.list:
        for sid, t in sorted(sim.scenario_catalog().items()):
            print(f"{sid}\t{t.description}")
        return EXIT_OK
    if not args.scenario:
        raise UsageError("a scenario id is required (see --list)")
    try:
        cfg = sim.scenario(args.scenario, args.n, gof.GofConfig(alpha=args.alpha, mc_draws=args.mc_draws))
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    em = {"init_strategy": args.init_strategy, "n_starts": args.n_starts}
    res = sim.run_scenario(cfg, args.replicates, args.seed, workers=args.workers, em_settings=em)
    out = Path(args.out)
    sim.write_results(out, [res])
    rep_path = Path(str(_stem(out)) + ".replicates.csv")
    sim.write_replicates(rep_path, res)
    _write_manifest(out, "simulate", argv, [], [out, rep_path], args.seed,
                    {"scenario": cfg.scenario_id, "n": args.n, "N": args.replicates,
                     "alpha": args.alpha, "mc_draws": args.mc_draws, **em})
    print(f"{res.scenario_id} n={res.n} N={res.N} completed={res.completed} "
          f"proportion={res.proportion:.6g} se={res.standard_error:.6g}")
    print(f"wall time {res.wall_time:.1f}s", file=sys.stderr)
    return EXIT_OK


def cmd_quantile(args, argv):
    if args.p < 1 or args.B < 1:
        raise UsageError("p and B must be >= 1")
    a_n, q = gof.threshold(args.p, args.B, args.alpha)
    print(f"alpha_n={a_n:.6g}")
    print(f"q={q:.6g}")
    return EXIT_OK


def cmd_qq(args, argv):
    _, X = _load_data(args.data, args.transform)
    spec, params = mixtures.load_params(args.params)
    if not 1 <= args.component <= spec.K:
        raise UsageError(f"component must be in 1..{spec.K}")
    post = mixtures.posteriors(spec, params, X)
    table = gof.qq_export(post, spec, params, args.component, args.mc_draws, make_rng(args.seed, "qq"))
    out = Path(args.out)
    gof.write_qq(out, table)
    _write_manifest(out, "qq", argv, [args.data, args.params], [out], args.seed,
                    {"component": args.component, "mc_draws": args.mc_draws})
    print(f"wrote {table.shape[0]} rows to {out}")
    return EXIT_OK


def cmd_convert(args, argv):
    if args.dataset == "voting":
        if len(args.inputs) != 1:
            raise UsageError("voting conversion takes one input file")
        n = datasets.convert_voting(args.inputs[0], args.out)
    else:
        n = datasets.convert_gvhd(args.inputs, args.out)
    print(f"wrote {n} rows to {args.out}")
    return EXIT_OK


def cmd_replay(args, argv):
    manifest = json.loads(Path(args.manifest).read_text())
    if manifest.get("format") != "clustergof.manifest":
        raise DataValidationError(f"{args.manifest}: not a manifest")
    return main(manifest["argv"])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="clustergof", description="Goodness-of-fit testing for model-based clustering.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def em_flags(p):
        p.add_argument("--n-starts", type=int, default=20)
        p.add_argument("--init-strategy", choices=("random_posterior", "short_em"), default="random_posterior")

    p = sub.add_parser("fit", help="fit a mixture by EM, selecting K by BIC over a range")
    p.add_argument("data")
    p.add_argument("--family", required=True, choices=mixtures.FAMILIES)
    p.add_argument("--K", type=_k_range, required=True, help="single K, range 1:6 or list 2,3")
    p.add_argument("--categories", help="category counts file (default: <data stem>.categories)")
    p.add_argument("--transform", choices=("log",))
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=500)
    em_flags(p)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", required=True, help="parameter document path")
    p.add_argument("--posteriors-out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("gof", help="run the goodness-of-fit test")
    p.add_argument("data")
    p.add_argument("--params")
    p.add_argument("--posteriors", help="posterior file c1..cK for the data rows")
    p.add_argument("--reference-posteriors", help="posteriors of a model-simulated sample, for centering")
    p.add_argument("--alpha", type=_alpha, default=0.05)
    p.add_argument("--basis", choices=("bernstein", "indicator_pca"), default="bernstein")
    p.add_argument("--mc-draws", type=int, default=100_000)
    p.add_argument("--transform", choices=("log",))
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--timing", action="store_true", help="include timings in the report")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gof)

    p = sub.add_parser("simulate", help="run a catalog scenario")
    p.add_argument("scenario", nargs="?")
    p.add_argument("--list", action="store_true")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--replicates", "-N", type=int, default=200)
    p.add_argument("--workers", type=int, default=None, help="default: $CLUSTERGOF_WORKERS or 1")
    p.add_argument("--alpha", type=_alpha, default=0.05)
    p.add_argument("--mc-draws", type=int, default=100_000)
    em_flags(p)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", default="simulation.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("quantile", help="per-block level and chi-square threshold")
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--B", type=int, required=True)
    p.add_argument("--alpha", type=_alpha, default=0.05)
    p.set_defaults(func=cmd_quantile)

    p = sub.add_parser("qq", help="export a posterior QQ table")
    p.add_argument("data")
    p.add_argument("--params", required=True)
    p.add_argument("--component", type=int, required=True, help="1-based component index")
    p.add_argument("--mc-draws", type=int, default=100_000)
    p.add_argument("--transform", choices=("log",))
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_qq)

    p = sub.add_parser("convert", help="convert a public dataset to the CSV layout")
    p.add_argument("dataset", choices=("voting", "gvhd"))
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("replay", help="rerun the command recorded in a manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.func(args, argv)
    except (UsageError, ConfigurationError, UnsupportedError) as exc:
        print(f"clustergof: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataValidationError, DegeneratePartitionError, FileNotFoundError) as exc:
        print(f"clustergof: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"clustergof: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
