import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import expr_texts, p
from hybridsyn.conditions import ConditionSet, StandardFormula
from hybridsyn.expr import eval_many
from hybridsyn.hybrid import Cell
from hybridsyn.verify import ProverConfig, Status, check, counterexamples, verify_all


def formula(rows, lo, hi, constraints=(), group=1):
    return StandardFormula(group, "t", Cell(tuple(lo), tuple(hi)), (), (), tuple(constraints),
                           tuple(tuple(r) for r in rows))


FAST = ProverConfig(timeout=5.0)


def test_square_below_two_is_proved():
    assert check(formula([[p("s1^2 - 2", 1)]], [-1], [1]), FAST).status is Status.PROVED


def test_square_below_half_is_refuted_near_the_ends(rng):
    v = check(formula([[p("s1^2 - 0.5", 1)]], [-1], [1]), FAST)
    assert v.status is Status.REFUTED
    X = counterexamples(v, 5, rng)
    assert X.shape[1] >= 1
    assert np.all(np.abs(X[0]) >= np.sqrt(0.5) - 1e-2)


def test_disjunction_covers_both_halves():
    f = formula([[p("s1 - 0.1", 1), p("-s1 - 0.1", 1)]], [-1], [1])
    assert check(f, FAST).status is Status.PROVED


def test_conjunction_of_rows_needs_each_row():
    f = formula([[p("s1 - 2", 1)], [p("s1 - 0.5", 1)]], [-1], [1])
    assert check(f, FAST).status is Status.REFUTED


def test_side_constraint_restricts_domain():
    # x <= 0.5 only has to hold where x^2 <= 0.2
    f = formula([[p("s1 - 0.5", 1)]], [-1], [1], constraints=[p("s1^2 - 0.2", 1)])
    assert check(f, FAST).status is Status.PROVED


def test_infeasible_constraints_are_proved():
    f = formula([[p("1 + 0*s1", 1)]], [-1], [1], constraints=[p("s1^2 + 1", 1)])
    assert check(f, FAST).status is Status.PROVED


def test_touching_bound_is_a_delta_counterexample():
    # x <= 0 or -x <= 0 holds, but its delta-weakened negation is satisfiable at 0
    f = formula([[p("s1", 1), p("-s1", 1)]], [-1], [1])
    assert check(f, FAST).status is Status.REFUTED


def test_small_violation_is_refuted():
    f = formula([[p("s1^2 - 1 + 1e-5", 1)]], [-1], [1])
    assert check(f, FAST).status is Status.REFUTED
    f = formula([[p("s1^2 - 1.1", 1)]], [-1], [1])
    assert check(f, FAST).status is Status.PROVED


def test_two_dim_rotation_energy():
    f = formula([[p("s1^2 + s2^2 - 2.01", 2)]], [-1, -1], [1, 1])
    assert check(f, FAST).status is Status.PROVED


def test_timeout_reported_on_budget_exhaustion():
    f = formula([[p("(s1^2 + s2^2 - 1)^2 - 1e-4 + 0*s1", 2)]], [-1, -1], [1, 1])
    v = check(f, ProverConfig(timeout=1e-3, probe=0))
    assert v.status in (Status.TIMEOUT, Status.REFUTED)


@pytest.mark.parametrize("split", ["smear", "scaled-widest"])
def test_split_heuristics_agree(split):
    cfg = ProverConfig(timeout=5.0, split=split)
    good = formula([[p("s1*s2 + sin(s1) - 2", 2)]], [-1, -1], [1, 1])
    bad = formula([[p("s1*s2 + sin(s1) - 1", 2)]], [-1, -1], [1, 1])
    assert check(good, cfg).status is Status.PROVED
    assert check(bad, cfg).status is Status.REFUTED


def test_config_validation():
    with pytest.raises(ValueError):
        ProverConfig(delta=0)
    with pytest.raises(ValueError):
        ProverConfig(split="random")


def test_group_exit_skips_rest_of_refuted_group():
    bad = formula([[p("s1", 1)]], [-1], [1])
    good = formula([[p("s1 - 2", 1)]], [-1], [1])
    cs = ConditionSet("rws", [[bad, good], [good]], None, None, None, 0.01, 0.01, 0.01)
    res = verify_all(cs, FAST, group_exit=True)
    assert res[0].status is Status.REFUTED and res[0].verdicts[1].label == "skipped"
    assert res[1].status is Status.PROVED
    full = verify_all(cs, FAST)
    assert full[0].verdicts[1].status is Status.PROVED
    early = verify_all(cs, FAST, early_exit=True)
    assert early[1].verdicts[0].label == "skipped"


@settings(max_examples=60, deadline=None)
@given(expr_texts(2, max_leaves=6), st.floats(-1.5, 1.5), st.floats(-1.5, 1.5), st.floats(0.1, 1.0),
       st.floats(0.1, 1.0), st.floats(-3, 3))
def test_verdicts_are_sound(text, a, b, wa, wb, level):
    e = p(text, 2) - level
    lo, hi = [a, b], [a + wa, b + wb]
    f = formula([[e]], lo, hi)
    v = check(f, ProverConfig(timeout=3.0))
    g1, g2 = np.linspace(lo[0], hi[0], 31), np.linspace(lo[1], hi[1], 31)
    X = np.array(np.meshgrid(g1, g2)).reshape(2, -1)
    with np.errstate(all="ignore"):
        vals = eval_many(e, X)
    vals = vals[np.isfinite(vals)]
    if v.status is Status.PROVED:
        assert np.all(vals <= 1e-9)
    if v.status is Status.REFUTED:
        # a refutation must come with a witness box where the bound is nearly violated
        assert v.witnesses
        X = counterexamples(v, 3, np.random.default_rng(0))
        assert X.shape[1] >= 1
        with np.errstate(all="ignore"):
            assert np.all(eval_many(e, X) > -1e-3)
