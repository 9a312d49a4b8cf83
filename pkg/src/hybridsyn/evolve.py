"""Grammar-guided genetic programming with CMA-ES constant tuning.

Each generation: tune the constants of every individual on the sample
fitness, send individuals with perfect sample fitness to the prover, collect
counterexamples at the generation barrier, then build the next population
from elites plus tournament-selected offspring.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import cma
from .conditions import NonsmoothV, SpecConfig, compile_spec
from .expr import ExprError, param, to_text
from .fitness import FitnessConfig, GenerationLog, SamplePool, cma_objective, overall, secondary
from .grammar import Genotype, Grammar, GrammarError, adheres, crossover, mutate, to_phenotype
from .hybrid import ModelError, OpenLoopSystem, SpecSets, close_loop
from .verify import (Certificate, GroupResult, ProverConfig, Status, certificate_from, counterexamples,
                     verify_all, verify_extra)


@dataclass(frozen=True)
class GPConfig:
    population: int = 14
    tournament: int = 3
    elite: int = 2
    p_mutation: float = 0.8
    p_crossover: float = 0.3
    max_generations: int = 200
    cma_generations: int = 30
    seed: int = 0
    time_budget: float = 7200.0  # seconds per run
    use_prover: bool = True
    counterexamples_per_refutation: int = 10

    def __post_init__(self):
        if self.population < self.elite + 2:
            raise ValueError("population must exceed elite count by at least 2")
        if not (0 <= self.p_mutation <= 1 and 0 <= self.p_crossover <= 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.tournament < 1:
            raise ValueError("tournament size must be positive")


@dataclass
class Individual:
    genotype: Genotype
    values: np.ndarray  # tuned parameters (beta last when it is tuned)
    f_samp: np.ndarray
    f_smt: np.ndarray
    fitness: float = 0.0
    results: list[GroupResult] | None = None
    certificate: Certificate | None = None
    error: str = ""

    @property
    def secondary(self) -> tuple[int, float]:
        return secondary(self.values)

    def rank_key(self) -> tuple:
        n, norm = self.secondary
        return (self.fitness, -n, -norm)


@dataclass
class Outcome:
    success: bool
    certificate: Certificate | None
    best: Individual | None
    generations: int
    seconds: float
    reason: str
    history: list[dict] = field(default_factory=list)
    seed: int = 0

    def to_json(self, gp: GPConfig | None = None, prover: ProverConfig | None = None,
                spec: SpecConfig | None = None, log_path: str | None = None) -> dict:
        cert = None
        if self.certificate is not None:
            c = self.certificate
            cert = {"V": to_text(c.V), "kappa": [to_text(k) for k in c.kappa], "gamma_c": c.gamma_c,
                    "gamma_d": c.gamma_d, "beta": c.beta, "spec": c.spec, "verdicts": c.verdict_table()}
        best = None
        if self.best is not None:
            best = {"expressions": self.best.genotype.text(), "values": [float(v) for v in self.best.values],
                    "fitness": self.best.fitness, "f_samp": [float(v) for v in self.best.f_samp],
                    "f_smt": [float(v) for v in self.best.f_smt]}
        return {"config": {"gp": asdict(gp) if gp else None, "prover": asdict(prover) if prover else None,
                           "spec": asdict(spec) if spec else None},
                "seed": self.seed, "generation_log": log_path, "outcome": "certificate" if self.success else "best-effort",
                "reason": self.reason, "generations": self.generations, "seconds": round(self.seconds, 3),
                "certificate": cert, "best": best, "history": self.history}


# ---------------------------------------------------------------------------
# operators on populations


def select(pop: Sequence[Individual], k: int, rng: np.random.Generator) -> Individual:
    """Tournament of ``k`` distinct individuals; ties go to fewer/smaller parameters."""
    k = min(k, len(pop))
    idx = rng.choice(len(pop), size=k, replace=False)
    return max((pop[i] for i in idx), key=lambda ind: ind.rank_key())


def next_generation(pop: Sequence[Individual], gp: GPConfig, grammar: Grammar,
                    rng: np.random.Generator) -> list[tuple[Genotype, np.ndarray]]:
    """Elites verbatim, then selected offspring (crossover then mutation, each gated)."""
    ranked = sorted(pop, key=lambda ind: ind.rank_key(), reverse=True)
    out = [(ind.genotype, ind.values.copy()) for ind in ranked[: gp.elite]]
    fixed = grammar.is_template
    while len(out) < gp.population:
        a = select(pop, gp.tournament, rng)
        children = [(a.genotype, a.values)]
        if not fixed and rng.random() < gp.p_crossover:
            b = select(pop, gp.tournament, rng)
            c1, c2 = crossover(a.genotype, b.genotype, rng)
            children = [(c1, a.values), (c2, b.values)]
        for gt, vals in children:
            if len(out) >= gp.population:
                break
            if not fixed and rng.random() < gp.p_mutation:
                gt = mutate(gt, grammar, rng)
            out.append((gt, vals))
    return out


# ---------------------------------------------------------------------------
# the synthesis loop


class Synthesis:
    """State of one run: problem data, shared sample pool and compile cache."""

    def __init__(self, system: OpenLoopSystem, sets: SpecSets, grammar: Grammar, spec: SpecConfig = SpecConfig(),
                 gp: GPConfig = GPConfig(), prover: ProverConfig = ProverConfig(),
                 fitness: FitnessConfig | None = None, workers: int = 1):
        self.system, self.sets, self.grammar, self.spec = system, sets, grammar, spec
        self.gp, self.prover, self.workers = gp, prover, workers
        self.fitness = fitness or FitnessConfig(epsilon=2 * prover.delta)
        ranges = grammar.const_ranges() or [(-10.0, 10.0)]
        self.sigma0 = 0.25 * float(np.mean([(hi - lo) / 2 for lo, hi in ranges]))
        if self.sigma0 <= 0:
            self.sigma0 = 0.25
        self.pool: SamplePool | None = None
        self._cache: dict = {}

    @property
    def tune_beta(self) -> bool:
        return self.spec.reach_and_stay and self.spec.beta is None

    def compile(self, gt: Genotype):
        """Phenotype, closed loop and condition set (cached by structure)."""
        ph = to_phenotype(gt, self.grammar)
        key = (ph.V, ph.kappa)
        hit = self._cache.get(key)
        if hit is None:
            cl = close_loop(self.system, list(ph.kappa))
            beta = None
            if self.spec.reach_and_stay:
                beta = param(ph.n_params) if self.tune_beta else self.spec.beta
            cs = compile_spec(cl, self.sets, ph.V, self.spec.kind, beta, self.spec.gamma_c, self.spec.gamma_d,
                              self.spec.c, self.spec.persistent_flow)
            if len(self._cache) > 512:
                self._cache.clear()
            hit = self._cache[key] = cs
        return ph, hit

    def initial_values(self, gt: Genotype, ph) -> np.ndarray:
        v = np.asarray(ph.values, dtype=float)
        return np.append(v, self.spec.beta_init) if self.tune_beta else v

    def evaluate(self, gt: Genotype, values: np.ndarray | None, rng: np.random.Generator):
        """Tune, maybe prove; returns the individual and its counterexamples."""
        G = 12 if self.spec.reach_and_stay else 6
        try:
            ph, cs = self.compile(gt)
        except (GrammarError, ExprError, NonsmoothV, ModelError, ValueError) as exc:
            return Individual(gt, np.zeros(0), np.zeros(G), np.zeros(G), 0.0, error=str(exc)), []
        if self.pool is None:
            self.pool = SamplePool(cs, self.fitness, seed=int(rng.integers(2**32)))
        x0 = self.initial_values(gt, ph)
        if self.tune_beta and values is not None and len(values):
            x0[-1] = values[-1]  # inherited beta; constants live in the genotype
        ev = self.pool.bind(cs)
        x, _ = cma.maximize(lambda P: cma_objective(ev.evaluate(P)), x0, self.sigma0,
                            self.gp.cma_generations, rng, target=float(G))
        fs = ev.evaluate(x[None, :])[0]
        fsmt = np.zeros(G)
        gt = gt.with_consts(x[: ph.n_params])
        ind = Individual(gt, x, fs, fsmt)
        cex = []
        if self.gp.use_prover and np.all(fs >= 1.0):
            results = verify_all(cs, self.prover, x, workers=self.workers, group_exit=True)
            ind.results = results
            for r in results:
                fsmt[r.group - 1] = 1.0 if r.status is Status.PROVED else 0.0
                for b, v in enumerate(r.verdicts):
                    if v.status is Status.REFUTED:
                        X = counterexamples(v, self.gp.counterexamples_per_refutation, rng, self.prover.delta)
                        if X.shape[1]:
                            cex.append((r.group - 1, b, X))
            if np.all(fsmt >= 1.0):
                extra = verify_extra(cs, self.prover, x) if cs.extra else {}
                if not all(r.status is Status.PROVED for r in extra.values()):
                    fsmt[-1] = 0.0  # side requirements gate the last group
                ind.certificate = certificate_from(cs, results, cs.cl.kappa, self.prover, x, extra)
        ind.fitness = float(overall(fs, fsmt))
        return ind, cex

    def run(self, log_path: str | None = None, progress=None) -> Outcome:
        gp = self.gp
        t0 = time.perf_counter()
        rng = np.random.default_rng([gp.seed, 0])
        entries = [(self.grammar.grow(rng), None) for _ in range(gp.population)]
        history: list[dict] = []
        log = None
        best_ever: Individual | None = None
        pop: list[Individual] = []
        for gen in range(1, gp.max_generations + 1):
            pop, pending = [], []
            any_proved_or_refuted, any_prover = False, False
            for i, (gt, vals) in enumerate(entries):
                ind, cex = self.evaluate(gt, vals, np.random.default_rng([gp.seed, gen, i + 1]))
                pop.append(ind)
                pending += cex
                if ind.results is not None:
                    any_prover = True
                    if any(r.status is not Status.TIMEOUT for r in ind.results):
                        any_proved_or_refuted = True
                if time.perf_counter() - t0 > gp.time_budget:
                    break
            for g, b, X in pending:  # generation barrier
                self.pool.add_counterexamples(g, b, X)
            if log is None and log_path and pop[0].f_samp.size:
                log = GenerationLog(log_path, len(pop[0].f_samp))
            best = max(pop, key=lambda ind: ind.rank_key())
            if best_ever is None or best.rank_key() > best_ever.rank_key():
                best_ever = best
            elapsed = time.perf_counter() - t0
            history.append({"generation": gen, "best": best.fitness, "best_so_far": best_ever.fitness,
                            "mean": float(np.mean([p.fitness for p in pop])),
                            "counterexamples": [self.pool.n_counterexamples(g) for g in range(len(self.pool.layout))]
                            if self.pool else [], "seconds": round(elapsed, 3)})
            if log is not None:
                log.write(gen, [_report(p) for p in pop], elapsed)
            if progress is not None:
                progress(history[-1])
            winners = [p for p in pop if p.certificate is not None]
            if winners:
                w = max(winners, key=lambda ind: ind.rank_key())
                return Outcome(True, w.certificate, w, gen, elapsed, "certified", history, gp.seed)
            if any_prover and not any_proved_or_refuted:
                return Outcome(False, None, best_ever, gen, elapsed, "prover timed out for every candidate",
                               history, gp.seed)
            if elapsed > gp.time_budget:
                return Outcome(False, None, best_ever, gen, elapsed, "time budget exhausted", history, gp.seed)
            sel_rng = np.random.default_rng([gp.seed, gen, 0])
            entries = next_generation(pop, gp, self.grammar, sel_rng)
            for gt, _ in entries:
                if not adheres(gt, self.grammar):
                    raise GrammarError("offspring left the grammar")
        return Outcome(False, None, best_ever, gp.max_generations, time.perf_counter() - t0,
                       "generation limit reached", history, gp.seed)


def _report(ind: Individual):
    from .fitness import FitnessReport

    n, norm = ind.secondary
    return FitnessReport(ind.f_samp, ind.f_smt, ind.fitness, n, norm)


def run(system: OpenLoopSystem, sets: SpecSets, grammar: Grammar, spec: SpecConfig = SpecConfig(),
        gp: GPConfig = GPConfig(), prover: ProverConfig = ProverConfig(), fitness: FitnessConfig | None = None,
        log_path: str | None = None, workers: int = 1, progress=None) -> Outcome:
    return Synthesis(system, sets, grammar, spec, gp, prover, fitness, workers).run(log_path, progress)


def cma_optimize(gt: Genotype, grammar: Grammar, objective, generations: int = 30,
                 rng: np.random.Generator | None = None, sigma0: float | None = None) -> Genotype:
    """Tune the const leaves of ``gt`` to maximise ``objective(P) -> (lam,)``."""
    rng = rng or np.random.default_rng()
    x0 = np.asarray(gt.consts(), dtype=float)
    if len(x0) == 0:
        return gt
    if sigma0 is None:
        ranges = grammar.const_ranges() or [(-10.0, 10.0)]
        sigma0 = 0.25 * float(np.mean([(hi - lo) / 2 for lo, hi in ranges]))
    x, _ = cma.maximize(objective, x0, sigma0, generations, rng)
    return gt.with_consts(x)


def aggregate(outcomes: Sequence[Outcome]) -> dict:
    """Success count and min/max/mean/std of generations and seconds over successful runs."""
    ok = [o for o in outcomes if o.success]

    def stats(xs):
        if not xs:
            return {"min": None, "max": None, "mean": None, "std": None}
        a = np.asarray(xs, dtype=float)
        return {"min": float(a.min()), "max": float(a.max()), "mean": float(a.mean()),
                "std": float(a.std(ddof=1)) if len(a) > 1 else 0.0}

    return {"runs": len(outcomes), "successes": len(ok), "generations": stats([o.generations for o in ok]),
            "seconds": stats([o.seconds for o in ok])}


def dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    raise TypeError(f"not serialisable: {type(o)}")
