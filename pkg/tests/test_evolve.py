import dataclasses
import json

import numpy as np
import pytest

from hybridsyn.evolve import GPConfig, Individual, aggregate, next_generation, run, select
from hybridsyn.grammar import adheres, parse_grammar
from hybridsyn.expr import state_names, var
from hybridsyn.problem import load


def ind(fitness, values=(), gt=None):
    return Individual(gt, np.asarray(values, dtype=float), np.ones(6), np.zeros(6), fitness)


def test_select_whole_population_gives_best(rng):
    pop = [ind(0.1), ind(0.4, [1.0]), ind(0.3), ind(0.2)]
    for _ in range(20):
        assert select(pop, len(pop), rng) is pop[1]


def test_select_ties_prefer_fewer_then_smaller_parameters(rng):
    pop = [ind(0.5, [1.0, 1.0]), ind(0.5, [3.0]), ind(0.5, [0.5])]
    assert select(pop, 3, rng) is pop[2]


def test_select_size_one_is_uniform():
    pop = [ind(float(i)) for i in range(4)]
    rng = np.random.default_rng(0)
    counts = np.zeros(4)
    for _ in range(4000):
        counts[[id(q) for q in pop].index(id(select(pop, 1, rng)))] += 1
    assert np.all(np.abs(counts / 4000 - 0.25) < 0.03)


GRAMMAR = """
start = (<V>, <K>)
<V> ::= <pol>
<pol> ::= <pol> + <pol> | <c>*<mon>
<mon> ::= s1 | s2 | s1*<mon> | s2*<mon>
<K> ::= <c>*y1 + <c>*y2
<c> ::= const[-10, 10]
"""


def test_next_generation_keeps_elites_and_size(rng):
    g = parse_grammar(GRAMMAR, v_names=state_names(2), k_names={"y1": var(0), "y2": var(1)})
    pop = [ind(float(i) / 10, [float(i)], g.grow(rng)) for i in range(6)]
    gp = GPConfig(population=6, elite=2)
    out = next_generation(pop, gp, g, rng)
    assert len(out) == 6
    assert out[0][0] is pop[5].genotype and out[1][0] is pop[4].genotype
    assert all(adheres(gt, g) for gt, _ in out)


def test_no_crossover_no_mutation_copies_parents(rng):
    g = parse_grammar(GRAMMAR, v_names=state_names(2), k_names={"y1": var(0), "y2": var(1)})
    pop = [ind(float(i) / 10, [float(i)], g.grow(rng)) for i in range(6)]
    gp = GPConfig(population=6, elite=2, p_crossover=0.0, p_mutation=0.0)
    out = next_generation(pop, gp, g, rng)
    ids = {id(p.genotype) for p in pop}
    assert all(id(gt) in ids for gt, _ in out)


def test_config_checks():
    with pytest.raises(ValueError):
        GPConfig(population=3, elite=2)
    with pytest.raises(ValueError):
        GPConfig(p_mutation=1.5)


def _short(name, **gp):
    pr = load(name)
    return pr, dataclasses.replace(pr.gp, **gp)


def test_system1_template_certifies_quickly():
    pr, gp = _short("sys1_ct", max_generations=20, seed=3)
    out = run(pr.system, pr.sets, pr.grammar, pr.spec, gp, pr.prover, pr.fitness)
    assert out.success and out.certificate is not None
    assert all(g.status.value == "proved" for g in out.certificate.groups)
    assert out.best.fitness == 1.0


def test_same_seed_gives_same_run():
    pr, gp = _short("sys1_ct", max_generations=5, seed=11)
    a = run(pr.system, pr.sets, pr.grammar, pr.spec, gp, pr.prover, pr.fitness)
    b = run(pr.system, pr.sets, pr.grammar, pr.spec, gp, pr.prover, pr.fitness)

    def strip(d):
        d = json.loads(json.dumps(d, default=str))
        d.pop("seconds")
        for h in d["history"]:
            h.pop("seconds")
        if d["certificate"]:
            for v in d["certificate"]["verdicts"]:
                v.pop("seconds")
        return d

    assert strip(a.to_json()) == strip(b.to_json())


def test_constant_v_never_certifies():
    pr = load("sys1_ct")
    g = parse_grammar("start = (<V>, <K>)\n<V> ::= <c>\n<K> ::= <c>*y1\n<c> ::= const[-10, 10]",
                      v_names=pr.state_names, k_names=pr.output_names)
    gp = dataclasses.replace(pr.gp, max_generations=3, seed=0)
    out = run(pr.system, pr.sets, g, pr.spec, gp, pr.prover, pr.fitness)
    assert not out.success and out.certificate is None
    assert out.best.fitness < 1.0


def test_without_prover_fitness_stays_at_half():
    pr, gp = _short("sys1_ct", max_generations=3, seed=1, use_prover=False)
    out = run(pr.system, pr.sets, pr.grammar, pr.spec, gp, pr.prover, pr.fitness)
    assert not out.success
    assert max(h["best"] for h in out.history) <= 0.5


def test_best_so_far_is_monotone():
    pr, gp = _short("sys2_ct", max_generations=4, seed=2)
    out = run(pr.system, pr.sets, pr.grammar, pr.spec, gp, pr.prover, pr.fitness)
    best = [h["best_so_far"] for h in out.history]
    assert best == sorted(best)


@pytest.mark.slow
def test_hysteresis_template_certifies():
    pr = load("hysteresis")
    gens = []
    for seed in range(3):
        gp = dataclasses.replace(pr.gp, max_generations=30, seed=seed)
        out = run(pr.system, pr.sets, pr.grammar, pr.spec, gp, pr.prover, pr.fitness)
        assert out.success
        gens.append(out.generations)
    assert np.median(gens) <= 10


def test_aggregate_statistics():
    from hybridsyn.evolve import Outcome

    outs = [Outcome(True, None, None, g, s, "certified") for g, s in [(1, 2.0), (3, 4.0)]]
    outs.append(Outcome(False, None, None, 50, 9.0, "generation limit reached"))
    agg = aggregate(outs)
    assert agg["runs"] == 3 and agg["successes"] == 2
    assert agg["generations"]["mean"] == 2.0 and agg["generations"]["std"] == pytest.approx(np.sqrt(2))
