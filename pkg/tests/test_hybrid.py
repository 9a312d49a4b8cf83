import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import p
from hybridsyn.expr import const, evaluate, parse, state_names, var
from hybridsyn.hybrid import (CoordSet, DimensionMismatch, EmptyInterior, Guard, JumpPiece, ModelError,
                              OpenLoopSystem, SpecSets, StatePartition, build_sampled_data, close_loop,
                              membership_formulas, product_difference)


def system1():
    N = state_names(2, 1)
    return OpenLoopSystem(StatePartition(2), (parse("s2", N), parse("-s1 + u1", N)), 1, (-1.0,), (1.0,))


def test_partition_dimensions():
    part = StatePartition(2, 2, 1, (0.01,))
    assert part.n == 5 and list(part.qs) == [2, 3] and list(part.ts) == [4]
    assert StatePartition(0, 1).n == 1
    with pytest.raises(ModelError):
        StatePartition(1, 0, 1, (0.0,))
    with pytest.raises(ModelError):
        StatePartition(1, 0, 1, ())


def test_close_loop_system1_saturates_linear_feedback():
    cl = close_loop(system1(), [p("-2*s1 - 3*s2", 2)])
    assert cl.flow[0] == var(1)
    for x in [(0.1, 0.1), (1.0, 1.0), (-2.0, 0.5)]:
        u = max(-1.0, min(1.0, -2 * x[0] - 3 * x[1]))
        assert evaluate(cl.flow[1], x) == pytest.approx(-x[0] + u)


def test_close_loop_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        close_loop(system1(), [p("s1", 2), p("s2", 2)])
    with pytest.raises(DimensionMismatch):
        close_loop(system1(), [p("s3", 3)])


def test_zero_controller_on_integrator():
    N = state_names(1, 1)
    sys = OpenLoopSystem(StatePartition(1), (parse("u1", N),), 1, (-1.0,), (1.0,))
    cl = close_loop(sys, [const(0.0)])
    assert evaluate(cl.flow[0], (0.7,)) == 0.0


def test_unbounded_input_is_not_saturated():
    N = state_names(1, 1)
    sys = OpenLoopSystem(StatePartition(1), (parse("u1", N),), 1, (-math.inf,), (math.inf,))
    cl = close_loop(sys, [p("5*s1", 1)])
    assert evaluate(cl.flow[0], (3.0,)) == 15.0


def test_sampled_data_wrapper_structure():
    sd = build_sampled_data(system1(), 0.01)
    part = sd.partition
    assert (part.nx, part.nq, part.nt, part.n) == (2, 2, 1, 5)
    cl = close_loop(sd, [p("-s1 - s2", 2)])
    x = (0.3, -0.2, 0.1, 0.4, 0.005)
    # flow uses the held state through the output h(s) = s_q
    assert evaluate(cl.flow[1], x) == pytest.approx(-0.3 + max(-1, min(1, -0.1 - 0.4)))
    assert [evaluate(f, x) for f in cl.flow[2:]] == [0.0, 0.0, 1.0]
    (tj,) = cl.timer_jumps
    assert tj.guard.when == ((4, 0.01),)
    assert [evaluate(r, x) for r in tj.reset] == [0.3, -0.2, 0.3, -0.2, 0.0]


def test_sampled_data_rejects_hybrid_input():
    sd = build_sampled_data(system1(), 0.01)
    with pytest.raises(ModelError):
        build_sampled_data(sd, 0.01)
    with pytest.raises(ModelError):
        build_sampled_data(system1(), 0.0)


def test_jump_reset_gets_timers_held():
    N = state_names(2, 1)
    sys = OpenLoopSystem(StatePartition(1, 1), (parse("s2 + u1", N),), 1, (-10.0,), (10.0,),
                         jumps=(JumpPiece(Guard((parse("1 - s1", N),), ((1, 1.0),)), (parse("s1", N), const(-1.0))),))
    cl = close_loop(sys, [p("-s1", 2)])
    assert len(cl.jumps) == 1 and cl.timer_jumps == ()
    assert [evaluate(r, (1.5, 1.0)) for r in cl.jumps[0].reset] == [1.5, -1.0]


def test_reset_length_checked():
    N = state_names(2)
    with pytest.raises(DimensionMismatch):
        OpenLoopSystem(StatePartition(1, 1), (parse("s2", N),),
                       jumps=(JumpPiece(Guard(), (parse("s1", N),)),))


def test_variable_index_range_checked():
    with pytest.raises(DimensionMismatch):
        OpenLoopSystem(StatePartition(1), (var(3),))


def sets_sys1():
    return SpecSets((-1, -1), (1, 1), (-.5, -.5), (.5, .5), (-.1, -.1), (.1, .1))


def test_spec_sets_checks():
    part = StatePartition(2)
    sets_sys1().check(part)
    with pytest.raises(ModelError):
        SpecSets((-1, -1), (1, 1), (-2, -.5), (.5, .5), (-.1, -.1), (.1, .1)).check(part)
    with pytest.raises(EmptyInterior):
        SpecSets((-1, -1), (1, 1), (-.5, -.5), (.5, .5), (0, -.1), (0, .1)).check(part)
    with pytest.raises(DimensionMismatch):
        SpecSets((-1,), (1,), (-.5,), (.5,), (-.1,), (.1,)).check(part)


def test_boundary_has_four_faces():
    reg = membership_formulas(sets_sys1(), StatePartition(2))
    assert len(reg.safe_boundary) == 4
    assert len(reg.goal_boundary) == 4
    assert len(reg.initial) == 1


def test_goal_includes_discrete_and_timer_coordinates():
    part = StatePartition(1, 1, 1, (0.5,))
    q = CoordSet.finite([-1, 1])
    sets = SpecSets((-5,), (5,), (-2,), (2,), (-1,), (1,), (q,), (q,))
    goal = sets.goal(part)
    assert goal[1].values == (-1.0, 1.0) and (goal[2].lo, goal[2].hi) == (0.0, 0.5)
    reg = membership_formulas(sets, part)
    assert len(reg.goal) == 2  # one cell per discrete value


def test_coupled_initial_set():
    sd = build_sampled_data(system1(), 0.01)
    B = CoordSet.box
    sets = SpecSets((-1, -1), (1, 1), (-.5, -.5), (.5, .5), (-.1, -.1), (.1, .1), sq=(B(-1, 1), B(-1, 1)),
                    oq=(B(-.1, .1), B(-.1, .1)), iq=(B(-.5, .5), B(-.5, .5)), it=(B(0, 0),),
                    init_links=((2, 0), (3, 1)))
    (cell,) = membership_formulas(sets, sd.partition).initial
    sub = cell.substitution()
    assert sub[2] == var(0) and sub[3] == var(1) and sub[4] == const(0.0)


def test_coordset_operations():
    a = CoordSet.box(-1, 1)
    assert a.contains(0.5) and not a.contains(1.5)
    assert CoordSet.box(-0.5, 0.5).subset_of(a)
    q = CoordSet.finite([1, -1, 1])
    assert q.values == (-1.0, 1.0) and q.is_finite
    with pytest.raises(ModelError):
        CoordSet.box(1, 0)
    with pytest.raises(ModelError):
        CoordSet.finite([])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=40, max_size=40),
       st.floats(-0.9, 0.0), st.floats(0.05, 0.9), st.floats(-0.9, 0.0), st.floats(0.05, 0.9))
def test_slabs_cover_difference_exactly(pts, ol, ow, pl, pw):
    S = [CoordSet.box(-1, 1), CoordSet.box(-1, 1)]
    O = [CoordSet.box(ol, min(ol + ow, 1)), CoordSet.box(pl, min(pl + pw, 1))]
    pieces = product_difference(S, O)
    for x in pts:
        in_o = all(c.contains(v) for c, v in zip(O, x))
        hits = sum(all(c.contains(v) for c, v in zip(pc, x)) for pc in pieces)
        if not in_o:
            assert hits >= 1
        interior_o = all(c.lo < v < c.hi for c, v in zip(O, x))
        if interior_o:
            assert hits == 0
