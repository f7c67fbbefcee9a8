"""Fixed-allocation BE and IS tables on the fixture, Normal or Student-t drivers.

Allocations are given per sample size as k:m for BE and n1:n2 for IS, e.g.

    python3 scripts/fixture_table.py --n 100000 --be 1000:100 --is 50000:50000 --truth 0.6167
"""
import argparse

from mccovar.harness import ExperimentSpec, emit_report, run_experiment, tail_from


def _pairs(items):
    return [tuple(int(v) for v in s.split(":")) for s in items]


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, nargs="+", required=True)
    p.add_argument("--be", nargs="+", help="k:m for each n (default allocation if omitted)")
    p.add_argument("--is", dest="is_", nargs="+", help="n1:n2 for each n (default allocation if omitted)")
    p.add_argument("--truth", type=float, required=True)
    p.add_argument("--tail", default="normal", choices=["normal", "t"])
    p.add_argument("--nu", type=int, default=6)
    p.add_argument("--sections", type=int, default=10)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--format", default="markdown", choices=["csv", "markdown"])
    args = p.parse_args()

    tail = tail_from(args.tail, args.nu if args.tail == "t" else None)
    be = _pairs(args.be) if args.be else "default"
    is_ = [(a, b, args.sections) for a, b in _pairs(args.is_)] if args.is_ else "default"
    for est, alloc in (("BE", be), ("IS", is_)):
        spec = ExperimentSpec(model="fixture", estimator=est, sample_sizes=args.n, allocation=alloc,
                              replications=args.reps, seed=args.seed, tail=tail, truth=args.truth,
                              sections=args.sections)
        print(f"\n{est}\n{emit_report(run_experiment(spec), args.format)}")


if __name__ == "__main__":
    main()
