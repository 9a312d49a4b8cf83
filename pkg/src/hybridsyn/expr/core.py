"""Immutable symbolic expression trees.

Nodes are hash-consed by structure (equality and hashing are structural), so
the same subexpression built twice compares equal and shares compiled code.
Variables and parameter slots are referenced by integer index; naming is a
presentation concern handled by :func:`to_text` and the parser.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

NONSMOOTH = frozenset({"sign", "sat", "min", "max"})
UNARY = frozenset({"neg", "sin", "cos", "exp", "sqrt", "sign", "sat", "pow"})
BINARY = frozenset({"add", "sub", "mul", "div", "min", "max"})


class ExprError(Exception):
    pass


class ExprDomainError(ExprError, ArithmeticError):
    """Point evaluation left the domain of a partial function."""


class NonsmoothDifferentiation(ExprError):
    pass


class Expr:
    """A node of an expression tree.

    ``data`` holds the node payload: ``(value, tunable)`` for constants,
    ``(index,)`` for variables and parameter slots, ``(n,)`` for integer
    powers and ``(lo, hi)`` for saturation.
    """

    __slots__ = ("op", "args", "data", "_hash")

    def __init__(self, op: str, args: tuple = (), data: tuple = ()):
        self.op = op
        self.args = args
        self.data = data
        self._hash = hash((op, args, data))

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other) -> bool:
        if self is other:
            return True
        if not isinstance(other, Expr) or self._hash != other._hash:
            return False
        return self.op == other.op and self.data == other.data and self.args == other.args

    def __repr__(self) -> str:
        return f"Expr({to_text(self)})"

    def __getstate__(self):
        return (self.op, self.args, self.data)

    def __setstate__(self, state):
        op, args, data = state
        self.op, self.args, self.data = op, args, data
        self._hash = hash((op, args, data))

    # arithmetic sugar
    def __add__(self, o):
        return Expr("add", (self, as_expr(o)))

    def __radd__(self, o):
        return Expr("add", (as_expr(o), self))

    def __sub__(self, o):
        return Expr("sub", (self, as_expr(o)))

    def __rsub__(self, o):
        return Expr("sub", (as_expr(o), self))

    def __mul__(self, o):
        return Expr("mul", (self, as_expr(o)))

    def __rmul__(self, o):
        return Expr("mul", (as_expr(o), self))

    def __truediv__(self, o):
        return Expr("div", (self, as_expr(o)))

    def __rtruediv__(self, o):
        return Expr("div", (as_expr(o), self))

    def __neg__(self):
        return Expr("neg", (self,))

    def __pow__(self, n):
        if isinstance(n, Expr):
            if n.op != "const":
                raise ExprError("only constant integer exponents are supported")
            n = n.data[0]
        if float(n) != int(n) or n < 0:
            raise ExprError(f"exponent must be a non-negative integer, got {n}")
        return Expr("pow", (self,), (int(n),))

    @property
    def value(self) -> float:
        return self.data[0]

    @property
    def index(self) -> int:
        return self.data[0]


def as_expr(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, (int, float, np.floating, np.integer)):
        return const(float(x))
    raise TypeError(f"cannot convert {type(x).__name__} to Expr")


def const(value: float, tunable: bool = False) -> Expr:
    return Expr("const", (), (float(value), bool(tunable)))


def var(i: int) -> Expr:
    return Expr("var", (), (int(i),))


def param(i: int) -> Expr:
    return Expr("param", (), (int(i),))


def sin(e) -> Expr:
    return Expr("sin", (as_expr(e),))


def cos(e) -> Expr:
    return Expr("cos", (as_expr(e),))


def exp(e) -> Expr:
    return Expr("exp", (as_expr(e),))


def sqrt(e) -> Expr:
    return Expr("sqrt", (as_expr(e),))


def minimum(a, b) -> Expr:
    return Expr("min", (as_expr(a), as_expr(b)))


def maximum(a, b) -> Expr:
    return Expr("max", (as_expr(a), as_expr(b)))


def sign(e) -> Expr:
    return Expr("sign", (as_expr(e),))


def sat(lo: float, hi: float, e) -> Expr:
    if lo > hi:
        raise ExprError(f"saturation bounds out of order: ({lo}, {hi})")
    return Expr("sat", (as_expr(e),), (float(lo), float(hi)))


ZERO = const(0.0)
ONE = const(1.0)


def is_const(e: Expr, value: float | None = None) -> bool:
    return e.op == "const" and (value is None or e.data[0] == value)


# ---------------------------------------------------------------------------
# traversal


def nodes(e: Expr) -> Iterable[Expr]:
    """Pre-order traversal (shared subtrees are visited once per occurrence)."""
    stack = [e]
    while stack:
        n = stack.pop()
        yield n
        stack.extend(reversed(n.args))


def free_vars(e: Expr) -> frozenset[int]:
    return _free_vars(e)


@lru_cache(maxsize=65536)
def _free_vars(e: Expr) -> frozenset[int]:
    if e.op == "var":
        return frozenset((e.data[0],))
    out: frozenset[int] = frozenset()
    for a in e.args:
        out = out | _free_vars(a)
    return out


def param_indices(e: Expr) -> frozenset[int]:
    return frozenset(n.data[0] for n in nodes(e) if n.op == "param")


def is_smooth(e: Expr) -> bool:
    return not any(n.op in NONSMOOTH for n in nodes(e))


def size(e: Expr) -> int:
    return sum(1 for _ in nodes(e))


# ---------------------------------------------------------------------------
# rewriting


def substitute(e: Expr, var_map: Mapping[int, Expr] | None = None,
               param_map: Mapping[int, Expr] | None = None) -> Expr:
    """Replace variables and/or parameter slots, simplifying constants."""
    var_map = var_map or {}
    param_map = param_map or {}
    memo: dict[Expr, Expr] = {}

    def go(n: Expr) -> Expr:
        hit = memo.get(n)
        if hit is not None:
            return hit
        if n.op == "var":
            r = var_map.get(n.data[0], n)
        elif n.op == "param":
            r = param_map.get(n.data[0], n)
        elif not n.args:
            r = n
        else:
            r = _rebuild(n, tuple(go(a) for a in n.args))
        memo[n] = r
        return r

    return go(e)


def bind_params(e: Expr, values: Sequence[float]) -> Expr:
    return substitute(e, param_map={i: const(v) for i, v in enumerate(values)})


def _rebuild(n: Expr, args: tuple) -> Expr:
    if args == n.args:
        return n
    return _fold(Expr(n.op, args, n.data))


def _fold(n: Expr) -> Expr:
    """Local simplification: constant folding and neutral elements."""
    op, a = n.op, n.args
    if a and all(x.op == "const" and not x.data[1] for x in a) and op not in ("div", "sqrt", "sign"):
        with np.errstate(all="ignore"):
            v = _apply_scalar(op, [x.data[0] for x in a], n.data)
        if math.isfinite(v):
            return const(v)
        return n
    if op == "add":
        if is_const(a[0], 0.0):
            return a[1]
        if is_const(a[1], 0.0):
            return a[0]
    elif op == "sub":
        if is_const(a[1], 0.0):
            return a[0]
        if is_const(a[0], 0.0):
            return _fold(Expr("neg", (a[1],)))
        if a[0] == a[1]:
            return ZERO
    elif op == "mul":
        if is_const(a[0], 0.0) or is_const(a[1], 0.0):
            return ZERO
        if is_const(a[0], 1.0):
            return a[1]
        if is_const(a[1], 1.0):
            return a[0]
        if is_const(a[0], -1.0):
            return _fold(Expr("neg", (a[1],)))
        if is_const(a[1], -1.0):
            return _fold(Expr("neg", (a[0],)))
    elif op == "div":
        if is_const(a[1], 1.0):
            return a[0]
        if is_const(a[0], 0.0) and a[1].op == "const" and a[1].data[0] != 0.0:
            return ZERO
        if a[0].op == "const" and a[1].op == "const" and a[1].data[0] != 0.0:
            return const(a[0].data[0] / a[1].data[0])
    elif op == "neg":
        if a[0].op == "neg":
            return a[0].args[0]
    elif op == "pow":
        k = n.data[0]
        if k == 0:
            return ONE
        if k == 1:
            return a[0]
    elif op == "sqrt":
        if a[0].op == "const" and a[0].data[0] >= 0:
            return const(math.sqrt(a[0].data[0]))
    return n


def simplify(e: Expr) -> Expr:
    """Bottom-up local simplification (no algebraic normalisation)."""
    memo: dict[Expr, Expr] = {}

    def go(n: Expr) -> Expr:
        hit = memo.get(n)
        if hit is not None:
            return hit
        r = _fold(Expr(n.op, tuple(go(a) for a in n.args), n.data)) if n.args else n
        memo[n] = r
        return r

    return go(e)


def add(*terms: Expr) -> Expr:
    out = ZERO
    for t in terms:
        out = _fold(Expr("add", (out, as_expr(t))))
    return out


def dot(a: Sequence[Expr], b: Sequence[Expr]) -> Expr:
    return add(*(_fold(Expr("mul", (x, y))) for x, y in zip(a, b)))


# ---------------------------------------------------------------------------
# differentiation


def diff(e: Expr, i: int) -> Expr:
    """Symbolic partial derivative with respect to variable ``i``."""
    memo: dict[Expr, Expr] = {}

    def d(n: Expr) -> Expr:
        hit = memo.get(n)
        if hit is not None:
            return hit
        r = _diff_node(n, d, i)
        memo[n] = r
        return r

    return d(e)


def _diff_node(n: Expr, d: Callable[[Expr], Expr], i: int) -> Expr:
    op, a = n.op, n.args
    if i not in free_vars(n):
        return ZERO
    if op == "var":
        return ONE
    if op in NONSMOOTH:
        raise NonsmoothDifferentiation(f"cannot differentiate '{op}' with respect to variable {i}")
    F = _fold
    if op == "neg":
        return F(Expr("neg", (d(a[0]),)))
    if op == "add":
        return F(Expr("add", (d(a[0]), d(a[1]))))
    if op == "sub":
        return F(Expr("sub", (d(a[0]), d(a[1]))))
    if op == "mul":
        return F(Expr("add", (F(Expr("mul", (d(a[0]), a[1]))), F(Expr("mul", (a[0], d(a[1])))))))
    if op == "div":
        num = F(Expr("sub", (F(Expr("mul", (d(a[0]), a[1]))), F(Expr("mul", (a[0], d(a[1])))))))
        return F(Expr("div", (num, F(Expr("pow", (a[1],), (2,))))))
    if op == "pow":
        k = n.data[0]
        inner = F(Expr("mul", (const(float(k)), F(Expr("pow", (a[0],), (k - 1,))))))
        return F(Expr("mul", (inner, d(a[0]))))
    if op == "sin":
        return F(Expr("mul", (F(Expr("cos", a)), d(a[0]))))
    if op == "cos":
        return F(Expr("neg", (F(Expr("mul", (F(Expr("sin", a)), d(a[0])))),)))
    if op == "exp":
        return F(Expr("mul", (n, d(a[0]))))
    if op == "sqrt":
        return F(Expr("div", (d(a[0]), F(Expr("mul", (const(2.0), n))))))
    raise ExprError(f"unknown op {op}")


def gradient(e: Expr, n: int) -> list[Expr]:
    return [diff(e, i) for i in range(n)]


# ---------------------------------------------------------------------------
# parameters


def extract_params(e: Expr | Sequence[Expr], start: int = 0):
    """Turn tunable constants into parameter slots.

    Accepts one expression or a sequence sharing a single slot numbering (in
    pre-order, left to right). Returns ``(exprs_with_slots, values)``.
    """
    single = isinstance(e, Expr)
    exprs = [e] if single else list(e)
    values: list[float] = []

    def go(n: Expr) -> Expr:
        if n.op == "const" and n.data[1]:
            values.append(n.data[0])
            return param(start + len(values) - 1)
        if not n.args:
            return n
        return Expr(n.op, tuple(go(a) for a in n.args), n.data)

    out = [go(x) for x in exprs]
    return (out[0] if single else out), np.array(values, dtype=float)


# ---------------------------------------------------------------------------
# point evaluation


def _apply_scalar(op: str, v: list, data: tuple) -> float:
    if op == "neg":
        return -v[0]
    if op == "add":
        return v[0] + v[1]
    if op == "sub":
        return v[0] - v[1]
    if op == "mul":
        return v[0] * v[1]
    if op == "div":
        return v[0] / v[1] if v[1] != 0 else math.nan
    if op == "pow":
        return v[0] ** data[0]
    if op == "sin":
        return math.sin(v[0])
    if op == "cos":
        return math.cos(v[0])
    if op == "exp":
        try:
            return math.exp(v[0])
        except OverflowError:
            return math.inf
    if op == "sqrt":
        return math.sqrt(v[0]) if v[0] >= 0 else math.nan
    if op == "min":
        return min(v[0], v[1])
    if op == "max":
        return max(v[0], v[1])
    if op == "sign":
        return float(np.sign(v[0]))
    if op == "sat":
        return min(max(v[0], data[0]), data[1])
    raise ExprError(f"unknown op {op}")


def evaluate(e: Expr, point: Sequence[float] = (), params: Sequence[float] = ()) -> float:
    """Evaluate at one point; raises :class:`ExprDomainError` on NaN/inf."""
    memo: dict[Expr, float] = {}

    def go(n: Expr) -> float:
        hit = memo.get(n)
        if hit is not None:
            return hit
        if n.op == "const":
            r = n.data[0]
        elif n.op == "var":
            r = float(point[n.data[0]])
        elif n.op == "param":
            r = float(params[n.data[0]])
        else:
            r = _apply_scalar(n.op, [go(a) for a in n.args], n.data)
        memo[n] = r
        return r

    with np.errstate(all="ignore"):
        try:
            r = go(e)
        except (OverflowError, ZeroDivisionError) as exc:
            raise ExprDomainError(str(exc)) from None
    if not math.isfinite(r):
        raise ExprDomainError(f"non-finite value {r} for {to_text(e)}")
    return r


_NP = {"sin": "np.sin", "cos": "np.cos", "exp": "np.exp", "sqrt": "np.sqrt", "sign": "np.sign"}
_BIN = {"add": "+", "sub": "-", "mul": "*", "div": "/"}


@lru_cache(maxsize=8192)
def lambdify(e: Expr) -> Callable:
    """Compile to ``f(X, p)`` evaluating on stacked points ``X[i] -> var i``.

    Values outside the domain of partial functions come back as NaN/inf.
    """
    lines: list[str] = []
    names: dict[Expr, str] = {}

    def go(n: Expr) -> str:
        hit = names.get(n)
        if hit is not None:
            return hit
        op = n.op
        if op == "const":
            return f"({n.data[0]!r})" if math.isfinite(n.data[0]) else f"float('{n.data[0]}')"
        if op == "var":
            s = f"X[{n.data[0]}]"
        elif op == "param":
            s = f"p[{n.data[0]}]"
        elif op in _BIN:
            s = f"({go(n.args[0])} {_BIN[op]} {go(n.args[1])})"
        elif op == "neg":
            s = f"(-{go(n.args[0])})"
        elif op == "pow":
            s = f"({go(n.args[0])} ** {n.data[0]})"
        elif op in _NP:
            s = f"{_NP[op]}({go(n.args[0])})"
        elif op == "min":
            s = f"np.minimum({go(n.args[0])}, {go(n.args[1])})"
        elif op == "max":
            s = f"np.maximum({go(n.args[0])}, {go(n.args[1])})"
        elif op == "sat":
            s = f"np.minimum(np.maximum({go(n.args[0])}, {n.data[0]!r}), {n.data[1]!r})"
        else:
            raise ExprError(f"unknown op {op}")
        name = f"t{len(names)}"
        names[n] = name
        lines.append(f"    {name} = {s}")
        return name

    out = go(e)
    src = "def _f(X, p):\n" + "\n".join(lines) + f"\n    return {out}\n"
    scope = {"np": np}
    exec(compile(src, "<lambdify>", "exec"), scope)
    inner = scope["_f"]

    def f(X, p=()):
        with np.errstate(all="ignore"):
            return inner(X, p)

    f.source = src
    return f


def eval_many(e: Expr, X, params=()) -> np.ndarray:
    """Vectorised evaluation; ``X`` has one row per variable."""
    X = np.asarray(X, dtype=float)
    r = lambdify(e)(X, np.asarray(params, dtype=float))
    return np.broadcast_to(np.asarray(r, dtype=float), X.shape[1:]).copy()


# ---------------------------------------------------------------------------
# printing

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}


def default_names(i: int) -> str:
    return f"s{i + 1}"


def to_text(e: Expr, names: Callable[[int], str] | Sequence[str] | None = None,
            param_names: Callable[[int], str] | None = None) -> str:
    """Infix text accepted back by :func:`hybridsyn.expr.parse`."""
    if names is None:
        name_of = default_names
    elif callable(names):
        name_of = names
    else:
        seq = list(names)
        name_of = seq.__getitem__
    pname = param_names or (lambda i: f"c{i}")

    def go(n: Expr, ctx: int) -> str:
        op = n.op
        if op == "const":
            v = n.data[0]
            s = repr(v) if math.isfinite(v) else ("1e999" if v > 0 else "-1e999")
            if s.endswith(".0"):
                s = s[:-2]
            return f"({s})" if v < 0 and ctx > 0 else s
        if op == "var":
            return name_of(n.data[0])
        if op == "param":
            return pname(n.data[0])
        if op in ("add", "sub"):  # a + (-c)*b reads better as a - c*b
            f = _flip_lead(n.args[1])
            if f is not None:
                op = "sub" if op == "add" else "add"
                n = Expr(op, (n.args[0], f))
        if op in ("mul", "div") and ctx <= 2:
            f = _flip_lead(n)
            if f is not None:
                return f"-{go(f, 2)}"
        if op in ("add", "sub", "mul", "div"):
            p = _PREC[op]
            left = go(n.args[0], p)
            right = go(n.args[1], p + 1)
            sym = {"add": " + ", "sub": " - ", "mul": "*", "div": "/"}[op]
            s = f"{left}{sym}{right}"
            return f"({s})" if p < ctx else s
        if op == "neg":
            s = f"-{go(n.args[0], 3)}"
            return f"({s})" if ctx > 0 else s
        if op == "pow":
            base = go(n.args[0], 5)
            return f"({base})^{n.data[0]}" if n.args[0].op == "pow" else f"{base}^{n.data[0]}"
        if op == "sat":
            lo, hi = n.data
            return f"sat({_num(lo)}, {_num(hi)}; {go(n.args[0], 0)})"
        args = ", ".join(go(a, 0) for a in n.args)
        return f"{op}({args})"

    return go(e, 0)


def _flip_lead(e: Expr) -> Expr | None:
    """``e`` with its leading negative constant factor negated, if it has one."""
    if e.op == "const" and e.data[0] < 0:
        return const(-e.data[0])
    if e.op in ("mul", "div"):
        f = _flip_lead(e.args[0])
        if f is not None:
            return Expr(e.op, (f, e.args[1]))
    return None


def _num(v: float) -> str:
    s = repr(v)
    return s[:-2] if s.endswith(".0") else s
