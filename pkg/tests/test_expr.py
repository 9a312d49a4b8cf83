import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from conftest import expr_texts, p, py_eval
from hybridsyn.expr import (ExprDomainError, Interval, NonsmoothDifferentiation, ParseError, bind_params, const,
                            contract, diff, eval_many, evaluate, expand, extract_params, free_vars, ieval,
                            is_smooth, lambdify, parse, simplify, state_names, substitute, to_text, var)

V_PEND = "-14.4983 + 23.06*s1^2 + 11.6469*s1*s2 + 17.9399*s2^2"


# --- point evaluation

def test_eval_with_parameter_slot():
    e = parse("s1^2 + c0*s2", state_names(2), allow_params=True)
    assert evaluate(e, (2, 3), (4,)) == 16


def test_eval_sat_inside_band():
    assert evaluate(p("sat(-1, 1; 5*s1)", 1), (0.1,)) == pytest.approx(0.5)


def test_eval_sat_clips():
    e = p("sat(-1, 1; 5*s1)", 1)
    assert evaluate(e, (1.0,)) == 1.0
    assert evaluate(e, (-3.0,)) == -1.0


def test_eval_sign():
    e = p("sign(s3)")
    assert evaluate(e, (0.0, 0.0, -0.2)) == -1
    assert evaluate(e, (0.0, 0.0, 0.0)) == 0  # sign(0) := 0 for sampling


def test_eval_domain_errors():
    with pytest.raises(ExprDomainError):
        evaluate(p("1/s1", 1), (0.0,))
    with pytest.raises(ExprDomainError):
        evaluate(p("sqrt(s1)", 1), (-1.0,))


def test_eval_many_marks_domain_violation_as_nan():
    out = eval_many(p("sqrt(s1)", 1), np.array([[4.0, -1.0]]))
    assert out[0] == 2.0 and np.isnan(out[1])


@settings(max_examples=200, deadline=None)
@given(expr_texts(3), st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_eval_matches_python(text, pt):
    try:
        ref = py_eval(text, pt)
    except (OverflowError, ZeroDivisionError):
        return
    assume(math.isfinite(ref) and abs(ref) < 1e12)
    e = p(text)
    assert evaluate(e, pt) == pytest.approx(ref, rel=1e-9, abs=1e-9)
    assert float(lambdify(e)(np.asarray(pt, dtype=float), ())) == pytest.approx(ref, rel=1e-9, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(expr_texts(3), st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_text_roundtrip(text, pt):
    e = p(text)
    try:
        a = evaluate(e, pt)
    except ExprDomainError:
        return
    assume(abs(a) < 1e12)
    b = evaluate(parse(to_text(e), state_names(3)), pt)
    assert b == pytest.approx(a, rel=1e-9, abs=1e-9)


def test_structural_sharing_and_hashing():
    a, b = p("s1*s2 + sin(s3)"), p("s1*s2 + sin(s3)")
    assert a == b and hash(a) == hash(b)


# --- differentiation

def test_diff_product():
    d = simplify(diff(p("s1^2*s2"), 0))
    for pt in [(1.0, 2.0, 0.0), (-0.5, 3.0, 0.0), (2.0, -1.0, 0.0)]:
        assert evaluate(d, pt) == pytest.approx(2 * pt[0] * pt[1])


def test_diff_sin_at_zero():
    assert evaluate(diff(p("sin(s1)", 1), 0), (0.0,)) == 1.0


def test_diff_pendulum_certificate():
    V = p(V_PEND, 2)
    got = evaluate(diff(V, 0), (0.3, -0.1))
    assert got == pytest.approx(12.67131, rel=1e-9)  # 46.12*0.3 + 11.6469*(-0.1)
    h = 1e-6
    fd = (evaluate(V, (0.3 + h, -0.1)) - evaluate(V, (0.3 - h, -0.1))) / (2 * h)
    assert got == pytest.approx(fd, rel=1e-6)


def test_diff_nonsmooth_raises():
    with pytest.raises(NonsmoothDifferentiation):
        diff(p("sign(s1)*s1", 1), 0)
    assert not is_smooth(p("sat(-1, 1; s1)", 1))


def test_diff_ignores_nonsmooth_off_path():
    d = diff(p("sign(s2)*s1"), 0)
    assert evaluate(d, (0.0, -2.0, 0.0)) == -1.0


@settings(max_examples=200, deadline=None)
@given(expr_texts(3), st.lists(st.floats(-1.5, 1.5), min_size=3, max_size=3), st.integers(0, 2))
def test_diff_matches_central_difference(text, pt, i):
    e = p(text)
    h = 1e-5
    hi, lo = list(pt), list(pt)
    hi[i] += h
    lo[i] -= h
    try:
        fd = (evaluate(e, hi) - evaluate(e, lo)) / (2 * h)
        d = evaluate(diff(e, i), pt)
    except ExprDomainError:
        return
    assume(abs(fd) < 1e6)
    assert d == pytest.approx(fd, rel=1e-4, abs=1e-4)


# --- intervals

def test_ieval_square():
    r = ieval(p("s1^2", 1), [(-1, 2)])
    assert r.lo <= 0 and r.lo > -1e-12
    assert r.hi >= 4 and r.hi < 4 + 1e-12


def test_ieval_sine():
    r = ieval(p("sin(s1)", 1), [(0, math.pi)])
    assert r.lo <= 0 and r.hi >= 1
    assert r.lo >= -1e-9 and r.hi <= 1 + 1e-9


def test_ieval_bilinear_contains_grid():
    e = p("s1*s2 - s1", 2)
    r = ieval(e, [(0, 1), (1, 2)])
    g = np.linspace(0, 1, 100)
    X = np.array(np.meshgrid(g, 1 + g)).reshape(2, -1)
    v = eval_many(e, X)
    assert r.lo <= v.min() and v.max() <= r.hi
    assert r.lo <= 0 and r.hi >= 1


def test_ieval_sign_straddling_zero():
    r = ieval(p("sign(s1)", 1), [(-1, 1)])
    assert r.lo == -1 and r.hi == 1


def test_interval_type():
    iv = Interval(-1.0, 2.0)
    assert iv.width == 3.0 and iv.mid == 0.5 and 0 in iv
    with pytest.raises(ValueError):
        Interval(1.0, 0.0)


@settings(max_examples=200, deadline=None)
@given(expr_texts(2), st.floats(-2, 1.5), st.floats(0.01, 1.5), st.floats(-2, 1.5), st.floats(0.01, 1.5))
def test_ieval_encloses_samples(text, a, wa, b, wb):
    e = p(text, 2)
    box = [(a, a + wa), (b, b + wb)]
    r = ieval(e, box)
    g1, g2 = np.linspace(a, a + wa, 21), np.linspace(b, b + wb, 21)
    X = np.array(np.meshgrid(g1, g2)).reshape(2, -1)
    with np.errstate(all="ignore"):
        v = eval_many(e, X)
    v = v[np.isfinite(v)]
    assert np.all(v >= r.lo) and np.all(v <= r.hi)


@settings(max_examples=100, deadline=None)
@given(expr_texts(2, max_leaves=6), st.floats(-1, 1))
def test_contract_keeps_feasible_points(text, level):
    e = p(text, 2)
    lo = np.array([[-2.0], [-2.0]])
    hi = np.array([[2.0], [2.0]])
    L, H, empty = contract([(e, -np.inf, level)], lo, hi)
    g = np.linspace(-2, 2, 41)
    X = np.array(np.meshgrid(g, g)).reshape(2, -1)
    with np.errstate(all="ignore"):
        v = eval_many(e, X)
    feas = X[:, v <= level]
    if feas.shape[1]:
        assert not empty[0]
        assert np.all(feas[0] >= L[0, 0] - 1e-12) and np.all(feas[0] <= H[0, 0] + 1e-12)
        assert np.all(feas[1] >= L[1, 0] - 1e-12) and np.all(feas[1] <= H[1, 0] + 1e-12)


def test_contract_shares_subexpressions():
    # s1 + s2 <= 0 and s1 + s2 >= 1 share the sum node: together they are empty
    e = p("s1 + s2", 2)
    _, _, empty = contract([(e, -np.inf, 0.0), (e, 1.0, np.inf)], np.array([[-1.0], [-1.0]]),
                           np.array([[1.0], [1.0]]))
    assert empty[0]


# --- parameters

def test_extract_params_marks_tunable_constants():
    e = const(3.2, tunable=True) * var(0) + const(1.1, tunable=True)
    slots, vals = extract_params(e)
    assert list(vals) == [3.2, 1.1]
    assert evaluate(slots, (2.0,), vals) == pytest.approx(7.5)
    assert evaluate(bind_params(slots, [1.0, 0.0]), (2.0,)) == 2.0


def test_extract_params_without_constants():
    _, vals = extract_params(p("s1^2", 1))
    assert len(vals) == 0


# --- misc

def test_parse_error_has_column():
    with pytest.raises(ParseError) as exc:
        parse("s1 + * 2", state_names(1))
    assert exc.value.col is not None


def test_parse_unknown_name():
    with pytest.raises(ParseError):
        parse("s1 + z", state_names(1))


def test_substitute_and_free_vars():
    e = substitute(p("s1*s2", 2), {1: p("s1 + 1", 2)})
    assert free_vars(e) == {0}
    assert evaluate(e, (2.0, 0.0)) == 6.0


def test_expand_polynomial():
    e = p("(s1 + s2)^2 - s1*(s1 + 2*s2)", 2)
    assert evaluate(expand(e), (1.7, -0.4)) == pytest.approx(0.16)
