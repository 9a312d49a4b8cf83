import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridsyn.expr import evaluate, state_names, var
from hybridsyn.grammar import (ConstT, GrammarError, GrammarNotTerminating, Node, NT, adheres, crossover, mutate,
                               parse_grammar, to_phenotype)
from hybridsyn.problem import bundled, load

PREXAMP = """
start = (<pol>)
<pol> ::= <pol> + <pol> | <const>*<mon>
<mon> ::= <var> | <var>*<mon>
<var> ::= s1 | s2
<const> ::= const[-10, 10]
"""

TUPLE = """
start = (<V>, <K>)
<V> ::= <const>*s1^2 + <const>*s2^2 + <const>
<K> ::= <pol>
<pol> ::= <pol> + <pol> | <const>*<mon>
<mon> ::= <var> | <var>*<mon>
<var> ::= y1 | y2
<const> ::= const[-10, 10]
"""


def _shape(n) -> str:
    """Phenotype text with every random constant written as ``c``."""
    if isinstance(n, Node):
        return "(" + "".join(_shape(c) for c in n.children) + ")"
    if isinstance(n, float):
        return "c"
    return n


def _enumerate(g, items, depth):
    """All constant-free shapes of an item sequence (independent of ``grow``)."""
    parts = []
    for it in items:
        if isinstance(it, NT):
            alts = g.rules[it.name]
            ok = [a for i, a in enumerate(alts) if depth < g.depth_cap or not g.recursive[it.name][i]]
            opts = set()
            for a in ok:
                opts |= {"(" + s + ")" for s in _enumerate(g, a, depth + 1)}
            parts.append(sorted(opts))
        elif isinstance(it, ConstT):
            parts.append(["c"])
        else:
            parts.append([it.text])
    return {"".join(p) for p in itertools.product(*parts)}


def test_grow_respects_depth_cap_against_enumeration(rng):
    g = parse_grammar(PREXAMP, depth_cap=2, v_names=state_names(2))
    shapes = _enumerate(g, g.start[0], 1)
    for _ in range(300):
        gt = g.grow(rng)
        assert "".join(_shape(c) for c in gt.root.children[0].children) in shapes


def test_single_alternative_template(rng):
    g = parse_grammar("start = (<V>)\n<V> ::= <c>*s1^2\n<c> ::= const[-10, 10]", v_names=state_names(1))
    assert g.is_template
    ph = to_phenotype(g.grow(rng), g)
    assert ph.n_params == 1
    assert -10 <= ph.values[0] <= 10
    assert evaluate(ph.V, (3.0,), ph.values) == pytest.approx(9 * ph.values[0])


def test_tuple_start_gives_pair(rng):
    g = parse_grammar(TUPLE, v_names=state_names(2), k_names={"y1": var(0), "y2": var(1)})
    ph = to_phenotype(g.grow(rng), g)
    assert len(ph.kappa) == 1
    assert ph.n_params >= 4


def test_quadratic_template_has_four_slots(rng):
    g = parse_grammar("start = (<V>)\n<V> ::= <c>*s1^2 + <c>*s1*s2 + <c>*s2^2 + <c>\n<c> ::= const[-10, 10]",
                      v_names=state_names(2))
    assert to_phenotype(g.grow(rng), g).n_params == 4


def test_leaf_only_tree_is_constant(rng):
    g = parse_grammar("start = (<c>)\n<c> ::= const[1, 2]")
    ph = to_phenotype(g.grow(rng), g)
    assert ph.n_params == 1 and 1 <= ph.values[0] <= 2


def test_not_terminating():
    g = parse_grammar("start = (<a>)\n<a> ::= s1 + <a>", depth_cap=3, v_names=state_names(1))
    with pytest.raises(GrammarNotTerminating):
        g.grow(np.random.default_rng(0))


def test_undefined_nonterminal():
    with pytest.raises(GrammarError):
        parse_grammar("start = (<a>)\n<a> ::= <b>")


def test_mutating_const_stays_in_range(rng):
    g = parse_grammar("start = (<c>)\n<c> ::= const[-10, 10]")
    gt = g.grow(rng)
    for _ in range(50):
        gt = mutate(gt, g, rng)
        assert -10 <= gt.consts()[0] <= 10


def test_mutated_monomial_is_monomial(rng):
    g = parse_grammar(PREXAMP, v_names=state_names(2))
    gt = g.grow(rng)
    for _ in range(200):
        gt = mutate(gt, g, rng)
        assert adheres(gt, g)
        for _, node, _ in gt.nodes():
            if node.symbol == "<mon>":
                text = _shape(node)
                assert set(text) <= set("()s12*")


def test_crossover_swaps_same_symbol(rng):
    g = parse_grammar(PREXAMP, v_names=state_names(2))
    a, b = g.grow(rng), g.grow(rng)
    c, d = crossover(a, b, rng)
    assert adheres(c, g) and adheres(d, g)
    e, f = crossover(a, a, rng)
    assert adheres(e, g) and adheres(f, g)


def test_mutation_site_obeys_cap(rng):
    g = parse_grammar(PREXAMP, depth_cap=4, v_names=state_names(2))
    gt = g.grow(rng)
    for _ in range(300):
        gt = mutate(gt, g, rng)
    for _, node, depth in gt.nodes():
        if depth >= g.depth_cap:
            assert not g.recursive[node.symbol][node.alt]


def test_phenotype_reproducible_from_tree(rng):
    g = parse_grammar(TUPLE, v_names=state_names(2), k_names={"y1": var(0), "y2": var(1)})
    gt = g.grow(rng)
    a, b = to_phenotype(gt, g), to_phenotype(gt, g)
    assert a.V == b.V and a.kappa == b.kappa and np.array_equal(a.values, b.values)


def test_with_consts_roundtrip(rng):
    g = parse_grammar(TUPLE, v_names=state_names(2), k_names={"y1": var(0), "y2": var(1)})
    gt = g.grow(rng)
    new = [float(i) for i in range(len(gt.consts()))]
    assert gt.with_consts(new).consts() == new


def test_controller_may_use_gradient_of_v(rng):
    g = parse_grammar("start = (<V>, <K>)\n<V> ::= <c>*s1^2\n<K> ::= -dV1\n<c> ::= const[1, 2]",
                      v_names=state_names(1), k_names={"y1": var(0)})
    ph = to_phenotype(g.grow(rng), g)
    assert evaluate(ph.kappa[0], (0.5,), ph.values) == pytest.approx(-ph.values[0])


def test_adherence_rejects_foreign_tree(rng):
    g = parse_grammar(PREXAMP, v_names=state_names(2))
    gt = g.grow(rng)
    bad = gt.replace(gt.nodes()[0][0], Node("<var>", 0, ("s1",)))
    assert not adheres(bad, g)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(bundled()), st.integers(0, 2**31))
def test_operators_adhere_on_bundled_grammars(name, seed):
    pr = load(name)
    g = pr.grammar
    r = np.random.default_rng(seed)
    a, b = g.grow(r), g.grow(r)
    for _ in range(20):
        a = mutate(a, g, r)
        a, b = crossover(a, b, r)
        assert adheres(a, g) and adheres(b, g)
