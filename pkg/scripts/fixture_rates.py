"""BE versus IS convergence on the 50-driver fixture.

Computes (or reuses) a cached high-n IS reference, sweeps both estimators over
the sample sizes and prints each table with its fitted log-log RMSE slope.

    python3 scripts/fixture_rates.py --n 1000 10000 100000 300000 --reps 100 --cache results/reference_cache.json
"""
import argparse
from pathlib import Path

from mccovar.dgmodel import published_fixture
from mccovar.harness import ExperimentSpec, emit_report, loglog_slope, reference_run, run_experiment, tail_from


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, nargs="+", default=[1_000, 10_000, 100_000, 300_000])
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--tail", default="normal", choices=["normal", "t"])
    p.add_argument("--nu", type=int, default=6)
    p.add_argument("--n-ref", type=int, default=10**7)
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--cache", default="reference_cache.json")
    p.add_argument("--format", default="markdown", choices=["csv", "markdown"])
    args = p.parse_args()

    tail = tail_from(args.tail, args.nu if args.tail == "t" else None)
    Path(args.cache).parent.mkdir(parents=True, exist_ok=True)
    truth = reference_run(published_fixture(), tail, 0.95, 0.95, args.n_ref, args.seed, args.cache)
    print(f"reference CoVaR (n_ref={args.n_ref}): {truth:.6f}")
    for est in ("BE", "IS"):
        spec = ExperimentSpec(model="fixture", estimator=est, sample_sizes=args.n, replications=args.reps,
                              seed=args.seed, tail=tail, truth=truth)
        rows = run_experiment(spec, threads=args.threads)
        print(f"\n{est}\n{emit_report(rows, args.format)}loglog_slope={loglog_slope(rows):.4f}")


if __name__ == "__main__":
    main()
