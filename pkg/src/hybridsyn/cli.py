"""Command line: synthesize, check, simulate, bench.

Exit codes: 0 success, 2 malformed input (problem, certificate, options),
3 no certificate in any synthesis run, 4 a check ended refuted or timed out.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .conditions import GROUP_LABELS, SpecConfig, compile_spec
from .evolve import GPConfig, Outcome, Synthesis, aggregate, dump_json
from .expr import ExprError, lambdify, to_text
from .hybrid import ModelError, close_loop
from .problem import (CertificateFile, Problem, ProblemError, bundled, format_certificate, load,
                      read_certificate)
from .sim import SimOptions, SimulationError, phase_svg, simulate, validate_certificate
from .verify import ProverConfig, Status, verify_all, verify_extra

EXIT_OK, EXIT_PARSE, EXIT_NO_CERT, EXIT_REFUTED = 0, 2, 3, 4

DEFAULT_BENCH = ["sys1_ct", "sys2_ct", "sys3_ct", "sys4_ct", "sys5_ct", "sys1_sd", "sys2_sd", "sys5_sd",
                 "sys5_dist", "hysteresis"]


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration overrides


def _configure(problem: Problem, args) -> tuple[SpecConfig, GPConfig, ProverConfig]:
    spec, gp, prover = problem.spec, problem.gp, problem.prover
    if getattr(args, "spec", None):
        spec = dataclasses.replace(spec, kind=args.spec)
    if getattr(args, "beta", None) is not None:
        spec = dataclasses.replace(spec, beta=args.beta)
    kw = {}
    if getattr(args, "timeout", None) is not None:
        kw["timeout"] = args.timeout
    if getattr(args, "delta", None) is not None:
        kw["delta"] = args.delta
    if kw:
        prover = dataclasses.replace(prover, **kw)
    if getattr(args, "max_generations", None) is not None:
        gp = dataclasses.replace(gp, max_generations=args.max_generations)
    return spec, gp, prover


def _fitness_for(problem: Problem, prover: ProverConfig, args):
    if getattr(args, "delta", None) is not None:
        return dataclasses.replace(problem.fitness, epsilon=2 * prover.delta)
    return problem.fitness


def _strip_timing(obj):
    """Drop wall-clock fields so repeated runs give identical reports."""
    if isinstance(obj, dict):
        return {k: _strip_timing(v) for k, v in obj.items() if k not in ("seconds", "generation_log")}
    if isinstance(obj, list):
        return [_strip_timing(v) for v in obj]
    return obj


def verdict_digest(rows: Sequence[dict]) -> str:
    text = ";".join(f"{r['group']}={r['status']}" for r in rows)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def certificate_meta(problem: Problem, cert, seed: int | None = None) -> dict:
    rows = cert.verdict_table()
    meta = {"problem": problem.name, "problem_hash": problem.digest, "spec": cert.spec,
            "gamma_c": cert.gamma_c, "gamma_d": cert.gamma_d, "beta": cert.beta if cert.beta is not None else "none",
            "delta": cert.prover.delta, "timeout": cert.prover.timeout, "verdicts": verdict_digest(rows)}
    if seed is not None:
        meta["seed"] = seed
    return meta


# ---------------------------------------------------------------------------
# synthesize


def _run_one(problem: Problem, spec, gp, prover, fitness, workers: int, run_dir: Path | None,
             quiet: bool) -> Outcome:
    log_path = str(run_dir / "generations.csv") if run_dir else None

    def progress(h):
        if not quiet:
            print(f"  seed {gp.seed} gen {h['generation']:3d}  best {h['best']:.4f}  "
                  f"best so far {h['best_so_far']:.4f}  {h['seconds']:.1f}s", flush=True)

    syn = Synthesis(problem.system, problem.sets, problem.grammar, spec, gp, prover, fitness, workers)
    out = syn.run(log_path, progress)
    if run_dir:
        rep = out.to_json(gp, prover, spec, log_path)
        rep["problem"] = {"name": problem.name, "hash": problem.digest}
        dump_json(_strip_timing(rep), run_dir / "report.json")
        dump_json({"seconds": round(out.seconds, 3), "history": [
            {"generation": h["generation"], "seconds": h["seconds"]} for h in out.history]}, run_dir / "timing.json")
        if out.success:
            meta = certificate_meta(problem, out.certificate, gp.seed)
            text = format_certificate(out.certificate.V, out.certificate.kappa, meta, problem.system.n,
                                      len(problem.system.outputs))
            if out.certificate.beta is not None:
                text += f"beta = {out.certificate.beta!r}\n"
            (run_dir / "certificate.txt").write_text(text)
    return out


def cmd_synthesize(args) -> int:
    problem = load(args.problem)
    if problem.grammar is None:
        raise UsageError("problem file has no [grammar] section")
    spec, gp, prover = _configure(problem, args)
    fitness = _fitness_for(problem, prover, args)
    out_dir = Path(args.out_dir) if args.out_dir else None
    outcomes = []
    for r in range(args.runs):
        seed = args.seed + r
        g = dataclasses.replace(gp, seed=seed)
        run_dir = None
        if out_dir:
            run_dir = out_dir / f"run_{seed}"
            run_dir.mkdir(parents=True, exist_ok=True)
        out = _run_one(problem, spec, g, prover, fitness, args.workers, run_dir, args.quiet)
        outcomes.append(out)
        status = "certified" if out.success else out.reason
        print(f"seed {seed}: {status} after {out.generations} generation(s), {out.seconds:.2f}s")
        if out.success:
            c = out.certificate
            snames = [f"s{i + 1}" for i in range(problem.system.n)]
            print(f"  V = {to_text(c.V, snames)}")
            for j, k in enumerate(c.kappa):
                print(f"  kappa{j + 1} = {to_text(k, problem.controller_names())}")
    agg = aggregate(outcomes)
    agg["problem"] = problem.name
    print(format_aggregate([agg]))
    if out_dir:
        dump_json(agg, out_dir / "aggregate.json")
        write_aggregate_csv([agg], out_dir / "aggregate.csv")
    return EXIT_OK if agg["successes"] else EXIT_NO_CERT


_AGG_COLS = ["problem", "runs", "successes", "gen_min", "gen_max", "gen_mean", "gen_std",
             "sec_min", "sec_max", "sec_mean", "sec_std"]


def _agg_row(a: dict) -> list:
    row = [a.get("problem", ""), a["runs"], a["successes"]]
    for key in ("generations", "seconds"):
        for s in ("min", "max", "mean", "std"):
            v = a[key][s]
            row.append("-" if v is None else round(v, 2))
    return row


def format_aggregate(aggs: Sequence[dict]) -> str:
    rows = [_AGG_COLS] + [[str(x) for x in _agg_row(a)] for a in aggs]
    widths = [max(len(r[i]) for r in rows) for i in range(len(_AGG_COLS))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows)


def write_aggregate_csv(aggs: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_AGG_COLS)
        for a in aggs:
            w.writerow(_agg_row(a))


# ---------------------------------------------------------------------------
# check


def _compile(problem: Problem, cf: CertificateFile, spec: SpecConfig, beta):
    cl = close_loop(problem.system, cf.kappa)
    return cl, compile_spec(cl, problem.sets, cf.V, spec.kind, beta, spec.gamma_c, spec.gamma_d, spec.c,
                            spec.persistent_flow)


def _all_proved(results, extra) -> bool:
    return all(r.status is Status.PROVED for r in results) and all(r.status is Status.PROVED
                                                                   for r in extra.values())


def find_beta(problem: Problem, cf: CertificateFile, spec: SpecConfig, prover: ProverConfig,
              n_grid: int = 100):
    """Line search over ``beta`` on a uniform grid between 0 and min V (sampled over O).

    Returns ``(beta, results, extra)`` for the first provable value, scanning
    from 0 downwards, or ``(None, None, None)``.
    """
    p = problem.system.partition
    goal = problem.sets.goal(p)
    per_axis = max(3, int(round(20000 ** (1 / max(1, sum(not c.is_finite for c in goal))))))
    axes = [np.asarray(c.values) if c.is_finite else np.linspace(c.lo, c.hi, per_axis) for c in goal]
    mesh = np.meshgrid(*axes, indexing="ij")
    X = np.stack([m.ravel() for m in mesh])
    for jdx, i in problem.sets.init_links:
        X[jdx] = X[i]
    X = np.vstack([X, np.zeros((problem.system.k, X.shape[1]))])
    vmin = float(np.min(np.broadcast_to(lambdify(cf.V)(X, ()), X.shape[1:])))
    if vmin >= 0:
        return None, None, None
    for beta in np.linspace(0.0, vmin, n_grid):
        _, cs = _compile(problem, cf, spec, float(beta))
        results = verify_all(cs, prover, early_exit=True)
        if not all(r.status is Status.PROVED for r in results):
            continue
        extra = verify_extra(cs, prover)
        if all(r.status is Status.PROVED for r in extra.values()):
            return float(beta), results, extra
    return None, None, None


def cmd_check(args) -> int:
    problem = load(args.problem)
    cf = read_certificate(args.certificate, problem)
    spec, _, prover = _configure(problem, args)
    if not getattr(args, "spec", None) and cf.meta.get("spec"):
        spec = dataclasses.replace(spec, kind=cf.meta["spec"])
    spec = dataclasses.replace(spec, gamma_c=cf.get_float("gamma_c", spec.gamma_c),
                               gamma_d=cf.get_float("gamma_d", spec.gamma_d))
    beta = args.beta if args.beta is not None else cf.beta
    t0 = time.perf_counter()
    if spec.reach_and_stay and (args.find_beta or beta is None):
        if not args.find_beta:
            raise UsageError("reach-and-stay needs a beta: add a 'beta = ...' line, pass --beta or --find-beta")
        beta, results, extra = find_beta(problem, cf, spec, prover)
        if beta is None:
            print("no provable beta on the search grid")
            return EXIT_REFUTED
        print(f"beta = {beta!r}")
    else:
        _, cs = _compile(problem, cf, spec, beta if spec.reach_and_stay else None)
        results = verify_all(cs, prover, workers=args.workers)
        extra = verify_extra(cs, prover) if cs.extra else {}
    total = time.perf_counter() - t0
    rows = []
    for r in results:
        rows.append({"group": r.group, "label": GROUP_LABELS.get(r.group, ""), "status": r.status.value,
                     "branches": len(r.verdicts), "seconds": round(r.seconds, 4),
                     "worst_branch_seconds": round(max((v.seconds for v in r.verdicts), default=0.0), 4)})
    for name, r in extra.items():
        rows.append({"group": name, "label": name.replace("_", " "), "status": r.status.value,
                     "branches": len(r.verdicts), "seconds": round(r.seconds, 4),
                     "worst_branch_seconds": round(max((v.seconds for v in r.verdicts), default=0.0), 4)})
    for row in rows:
        g = f"phi{row['group']}" if isinstance(row["group"], int) else row["group"]
        print(f"{g:>17}  {row['status']:<13} {row['branches']:3d} branch(es) {row['seconds']:8.3f}s  {row['label']}")
    ok = _all_proved(results, extra)
    print(f"{'all proved' if ok else 'NOT proved'} ({spec.kind}, {total:.2f}s)")
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        dump_json({"problem": problem.name, "problem_hash": problem.digest, "spec": spec.kind, "beta": beta,
                   "prover": dataclasses.asdict(prover), "proved": ok, "verdicts": rows,
                   "seconds": round(total, 3)}, out / "check.json")
    return EXIT_OK if ok else EXIT_REFUTED


# ---------------------------------------------------------------------------
# simulate


def _full_state(problem: Problem, x0: Sequence[float]) -> np.ndarray:
    """Accept either a full state or just ``s_x`` (held copies and timers filled in)."""
    p = problem.system.partition
    x0 = np.asarray(x0, dtype=float)
    if len(x0) == p.n:
        return x0
    if len(x0) == p.nx and problem.sets.init_links:
        x = np.zeros(p.n)
        x[:p.nx] = x0
        for jdx, i in problem.sets.init_links:
            x[jdx] = x[i]
        return x
    raise UsageError(f"--x0 needs {p.n} values" + (f" (or {p.nx})" if problem.sets.init_links else ""))


def cmd_simulate(args) -> int:
    problem = load(args.problem)
    cf = read_certificate(args.certificate, problem)
    cl = close_loop(problem.system, cf.kappa)
    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    names = [f"s{i + 1}" for i in range(problem.system.n)]
    beta = args.beta if args.beta is not None else cf.beta
    opts = SimOptions(t_max=args.t_max, dt=args.dt)
    if args.x0:
        x0 = _full_state(problem, [float(v) for v in args.x0.split(",")])
        try:
            arc = simulate(cl, x0, opts)
        except SimulationError as exc:
            raise UsageError(str(exc)) from None
        arc.to_csv(out / "arc.csv", names)
        print(f"simulated to t = {arc.t[-1]:.4f}, j = {arc.j[-1]}, final state {np.round(arc.final(), 5).tolist()}")
        if args.plots:
            phase_svg(out / "phase.svg", [arc], problem.sets, V=cf.V, beta=beta, nstate=problem.system.n,
                      fixed=x0)
        return EXIT_OK
    d_sampler = None
    if problem.system.k:
        lo, hi = np.asarray(problem.system.dist_lo), np.asarray(problem.system.dist_hi)
        d_sampler = lambda rng: rng.uniform(lo, hi)  # noqa: E731
    rep = validate_certificate(cl, problem.sets, args.runs, V=cf.V, beta=beta, seed=args.seed,
                               opts=opts, d_sampler=d_sampler)
    summary = rep.as_dict()
    dump_json(summary, out / "validation.json")
    print(f"{rep.runs} runs: {rep.reached} reached, {rep.violations} violation(s), {rep.unfinished} unfinished")
    rng = np.random.default_rng(args.seed)
    from .sim import _sample_initial

    arcs = []
    for r in range(min(args.runs, 8)):
        x0 = _sample_initial(problem.sets, cl, rng)
        try:
            arc = simulate(cl, x0, opts)
        except SimulationError:
            continue
        arc.to_csv(out / f"arc_{r}.csv", names)
        arcs.append(arc)
    if args.plots:
        phase_svg(out / "phase.svg", arcs, problem.sets, V=cf.V, beta=beta, nstate=problem.system.n,
                  fixed=arcs[0].x[0] if arcs else None)
    return EXIT_OK if rep.violations == 0 else EXIT_REFUTED


# ---------------------------------------------------------------------------
# bench


def cmd_bench(args) -> int:
    names = args.problems or DEFAULT_BENCH
    out_dir = Path(args.out_dir) if args.out_dir else None
    aggs = []
    for name in names:
        problem = load(name)
        spec, gp, prover = _configure(problem, args)
        fitness = _fitness_for(problem, prover, args)
        outcomes = []
        for r in range(args.runs):
            g = dataclasses.replace(gp, seed=args.seed + r)
            run_dir = None
            if out_dir:
                run_dir = out_dir / problem.name / f"run_{g.seed}"
                run_dir.mkdir(parents=True, exist_ok=True)
            out = _run_one(problem, spec, g, prover, fitness, args.workers, run_dir, quiet=True)
            print(f"{problem.name} seed {g.seed}: {'certified' if out.success else out.reason} "
                  f"({out.generations} gen, {out.seconds:.1f}s)", flush=True)
            outcomes.append(out)
        agg = aggregate(outcomes)
        agg["problem"] = problem.name
        aggs.append(agg)
    print(format_aggregate(aggs))
    if out_dir:
        dump_json(aggs, out_dir / "bench.json")
        write_aggregate_csv(aggs, out_dir / "bench.csv")
    return EXIT_OK


def cmd_list(args) -> int:
    for name in bundled():
        p = load(name)
        print(f"{name:16} n={p.system.n} m={p.system.m}  {p.spec.kind}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hybridsyn", description="Lyapunov-barrier synthesis for hybrid systems")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    def prover_flags(p):
        p.add_argument("--timeout", type=float, help="prover timeout per formula, seconds")
        p.add_argument("--delta", type=float, help="prover precision")
        p.add_argument("--spec", choices=["rws", "rsws", "rsws+zeno"], help="specification to certify")
        p.add_argument("--workers", type=int, default=1, help="prover worker processes")
        p.add_argument("--out-dir", help="directory for reports")

    s = sub.add_parser("synthesize", help="run seeded synthesis repeats")
    s.add_argument("problem")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--runs", type=int, default=1)
    s.add_argument("--max-generations", type=int)
    s.add_argument("--beta", type=float, help="fixed reach-and-stay level (tuned when omitted)")
    s.add_argument("--quiet", action="store_true")
    prover_flags(s)
    s.set_defaults(fn=cmd_synthesize)

    c = sub.add_parser("check", help="re-verify a certificate file")
    c.add_argument("problem")
    c.add_argument("certificate")
    c.add_argument("--beta", type=float)
    c.add_argument("--find-beta", action="store_true", help="line search for a reach-and-stay level")
    prover_flags(c)
    c.set_defaults(fn=cmd_check)

    m = sub.add_parser("simulate", help="simulate the closed loop of a certificate")
    m.add_argument("problem")
    m.add_argument("certificate")
    m.add_argument("--x0", help="comma separated initial state; omitted: sample --runs points in I")
    m.add_argument("--runs", type=int, default=100)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--beta", type=float)
    m.add_argument("--t-max", type=float, default=20.0)
    m.add_argument("--dt", type=float, default=2e-3)
    m.add_argument("--plots", action="store_true", help="write phase.svg")
    m.add_argument("--out-dir")
    m.set_defaults(fn=cmd_simulate)

    b = sub.add_parser("bench", help="benchmark table over bundled problems")
    b.add_argument("problems", nargs="*")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--runs", type=int, default=10)
    b.add_argument("--max-generations", type=int)
    prover_flags(b)
    b.set_defaults(fn=cmd_bench)

    ls = sub.add_parser("list", help="list bundled problems")
    ls.set_defaults(fn=cmd_list)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ProblemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (UsageError, ModelError, ExprError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
