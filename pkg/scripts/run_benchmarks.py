"""Seeded synthesis statistics per benchmark (generations and seconds of successful runs).

    python scripts/run_benchmarks.py --runs 10 --out-dir results/benchmarks
    python scripts/run_benchmarks.py sys1_ct sys1_sd --runs 3
"""

import argparse
import dataclasses
from pathlib import Path

from hybridsyn.cli import DEFAULT_BENCH, format_aggregate, write_aggregate_csv
from hybridsyn.evolve import aggregate, dump_json, run
from hybridsyn.problem import load


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("problems", nargs="*", default=DEFAULT_BENCH)
    ap.add_argument("--runs", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--max-generations", type=int)
    ap.add_argument("--out-dir", default="results/benchmarks")
    args = ap.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name in args.problems:
        pr = load(name)
        outcomes = []
        for r in range(args.runs):
            gp = dataclasses.replace(pr.gp, seed=args.seed + r)
            if args.max_generations:
                gp = dataclasses.replace(gp, max_generations=args.max_generations)
            o = run(pr.system, pr.sets, pr.grammar, pr.spec, gp, pr.prover, pr.fitness)
            outcomes.append(o)
            print(f"{name} seed {gp.seed}: {'certified' if o.success else o.reason} "
                  f"({o.generations} gen, {o.seconds:.1f}s)", flush=True)
        agg = aggregate(outcomes)
        agg["problem"] = name
        rows.append(agg)
    print(format_aggregate(rows))
    dump_json(rows, out / "benchmarks.json")
    write_aggregate_csv(rows, out / "benchmarks.csv")


if __name__ == "__main__":
    main()
