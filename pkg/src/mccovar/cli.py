"""Command-line entry point: ``python -m mccovar <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 estimator degeneracy.
A ``--config`` JSON file supplies defaults for any flag (keys are flag names
with underscores); explicit flags override it.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .dgmodel import published_fixture, save_model
from .errors import (ConvergenceError, CurvatureError, DegenerateISError, InfiniteQuantileError,
                     InvalidParameterError)
from .harness import (ExperimentSpec, emit_report, loglog_slope, reference_run, resolve_model,
                      run_experiment, single_estimate, tail_from)
from .numerics import RngStream

EXIT_CONFIG = 2
EXIT_DEGENERATE = 3
CACHE_NAME = "reference_cache.json"


def _common(p: argparse.ArgumentParser, many_n: bool):
    p.add_argument("--config", help="JSON file with default flag values")
    p.add_argument("--model", default="linear",
                   help="linear, nonlinear, fixture, or a model JSON path")
    p.add_argument("--tail", default="normal", choices=["normal", "t"])
    p.add_argument("--nu", type=int)
    p.add_argument("--rho", type=float, default=0.95, help="correlation for linear/nonlinear")
    p.add_argument("--alpha", type=float, default=0.95)
    p.add_argument("--beta", type=float, default=0.95)
    p.add_argument("--estimator", default="BE", type=str.upper, choices=["BE", "IS", "QRE"])
    if many_n:
        p.add_argument("--n", type=int, nargs="+", default=[10_000])
    else:
        p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--k", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--n1", type=int)
    p.add_argument("--n2", type=int)
    p.add_argument("--b", type=int, default=10, help="sectioning batches for IS")
    p.add_argument("--bootstrap", type=int, default=200, help="QRE bootstrap replicates")
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--ci-level", type=float, default=0.95)
    p.add_argument("--out")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mccovar", description="Monte-Carlo CoVaR estimation")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="one estimate with its confidence interval")
    _common(p, many_n=False)

    for name, text in (("table", "replicated sweep over sample sizes"),
                       ("rates", "replicated sweep plus log-log RMSE slope")):
        p = sub.add_parser(name, help=text)
        _common(p, many_n=True)
        p.add_argument("--reps", type=int, default=100)
        p.add_argument("--format", default="csv", choices=["csv", "markdown"])
        p.add_argument("--reference", type=float, help="ground truth for delta-gamma models")
        p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("reference", help="high-n IS reference value, cached next to --out")
    _common(p, many_n=False)
    p.set_defaults(n=10_000_000)

    p = sub.add_parser("export-fixture", help="write the published 50-driver model as JSON")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    return parser


def _allocation(args):
    if args.estimator == "BE" and (args.k is not None or args.m is not None):
        if args.k is None or args.m is None:
            raise InvalidParameterError("--k and --m go together")
        return (args.k, args.m)
    if args.estimator == "IS" and (args.n1 is not None or args.n2 is not None):
        if args.n1 is None or args.n2 is None:
            raise InvalidParameterError("--n1 and --n2 go together")
        return (args.n1, args.n2, args.b)
    return "default"


def _cache_path(args) -> Path:
    return (Path(args.out).parent if args.out else Path.cwd()) / CACHE_NAME


def spec_from_args(args) -> ExperimentSpec:
    sizes = args.n if isinstance(args.n, list) else [args.n]
    return ExperimentSpec(
        model=args.model, estimator=args.estimator, alpha=args.alpha, beta=args.beta,
        sample_sizes=sizes, allocation=_allocation(args),
        replications=getattr(args, "reps", 1), seed=args.seed, ci_level=args.ci_level,
        tail=tail_from(args.tail, args.nu), rho=args.rho,
        truth=getattr(args, "reference", None), reference_cache=str(_cache_path(args)),
        bootstrap_reps=args.bootstrap, sections=args.b,
    )


def _write(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _run(args) -> int:
    if args.command == "export-fixture":
        save_model(published_fixture(), args.out)
        return 0
    spec = spec_from_args(args)
    if args.command == "estimate":
        n = spec.sample_sizes[0]
        rep = single_estimate(spec, n, RngStream(spec.seed, 0, (n,)))
        doc = {"estimator": spec.estimator, "n": n, "alloc": spec.alloc_label(n),
               "point": rep.point, "ci_low": rep.ci_low, "ci_high": rep.ci_high,
               "level": rep.level, "has_ci": rep.has_ci, "diagnostics": rep.diagnostics}
        _write(json.dumps(doc, indent=2) + "\n", args.out)
        return 0
    if args.command == "reference":
        value = reference_run(resolve_model(spec.model), spec.tail, spec.alpha, spec.beta,
                              spec.sample_sizes[0], spec.seed, _cache_path(args))
        print(f"{value:.10g}")
        return 0
    rows = run_experiment(spec, threads=args.threads)
    text = emit_report(rows, args.format)
    _write(text, args.out)
    if args.command == "rates":
        print(f"loglog_slope={loglog_slope(rows):.6f}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "config", None):
            try:
                defaults = json.loads(Path(args.config).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise InvalidParameterError(f"cannot read config {args.config}: {exc}") from None
            # Re-parse with the file as defaults so explicit flags still win.
            sub = parser._subparsers._group_actions[0].choices[args.command]
            sub.set_defaults(**{k.replace("-", "_"): v for k, v in defaults.items()})
            args = parser.parse_args(argv)
        return _run(args)
    except (DegenerateISError, InfiniteQuantileError, CurvatureError, ConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
