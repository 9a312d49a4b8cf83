import math

import numpy as np
import pytest
from hypothesis import strategies as st

from hybridsyn.expr import parse, state_names


def _leaf(nvars):
    return st.one_of(
        st.integers(1, nvars).map(lambda i: f"s{i}"),
        st.floats(-3, 3, allow_nan=False).map(lambda c: f"({c!r})"),
    )


def expr_texts(nvars: int = 3, smooth: bool = True, max_leaves: int = 12):
    """Random expression text over s1..s{nvars}, parseable by both the package and Python."""
    unary = ["sin", "cos"] if smooth else ["sin", "cos", "sign"]

    def extend(children):
        return st.one_of(
            st.tuples(children, st.sampled_from(["+", "-", "*"]), children).map(lambda t: f"({t[0]} {t[1]} {t[2]})"),
            st.tuples(st.sampled_from(unary), children).map(lambda t: f"{t[0]}({t[1]})"),
            st.tuples(children, st.integers(2, 3)).map(lambda t: f"({t[0]})^{t[1]}"),
            st.tuples(children).map(lambda t: f"exp(0.3*{t[0]})") if smooth else children,
        )

    return st.recursive(_leaf(nvars), extend, max_leaves=max_leaves)


def py_eval(text: str, point) -> float:
    """Plain-Python reference evaluation of an expression text."""
    env = {f"s{i + 1}": float(v) for i, v in enumerate(point)}
    env.update(sin=math.sin, cos=math.cos, exp=math.exp, sqrt=math.sqrt,
               sign=lambda x: float((x > 0) - (x < 0)))
    return eval(text.replace("^", "**"), {"__builtins__": {}}, env)


def names(n: int, m: int = 0, k: int = 0):
    return state_names(n, m, k)


def p(text: str, n: int = 3, m: int = 0, k: int = 0):
    return parse(text, state_names(n, m, k))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
