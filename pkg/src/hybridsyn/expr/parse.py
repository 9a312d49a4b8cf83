"""Infix expression syntax used in problem, grammar and certificate files.

``+ - * / ^``, ``sin cos exp sqrt min max sign sat(lo, hi; arg)``, decimal
literals and whatever identifiers the caller binds (``s1..sn``, ``u1..um``,
``d1..dk`` by default). ``tc(v)`` marks a tunable constant.
"""

from __future__ import annotations

import ast
import math
import re
from typing import Mapping

from .core import Expr, ExprError, const, param, var

_FUNCS1 = {"sin", "cos", "exp", "sqrt", "sign"}
_FUNCS2 = {"min", "max"}


class ParseError(ExprError, ValueError):
    def __init__(self, msg: str, text: str = "", line: int = 1, col: int = 0):
        self.line, self.col, self.text = line, col, text
        super().__init__(f"{msg} (line {line}, column {col + 1}): {text!r}")


def state_names(n: int, m: int = 0, k: int = 0) -> dict[str, Expr]:
    """Bind ``s1..sn``, ``u1..um`` and ``d1..dk`` to consecutive variables."""
    out = {f"s{i + 1}": var(i) for i in range(n)}
    out.update({f"u{i + 1}": var(n + i) for i in range(m)})
    out.update({f"d{i + 1}": var(n + m + i) for i in range(k)})
    return out


def parse(text: str, names: Mapping[str, Expr] | None = None,
          constants: Mapping[str, float] | None = None, allow_params: bool = False) -> Expr:
    names = dict(names or {})
    consts = {"pi": math.pi}
    consts.update(constants or {})
    src = text.strip()
    if not src:
        raise ParseError("empty expression", text)
    # `sat(lo, hi; x)` -> `sat(lo, hi, x)`, `^` -> `**`
    src = src.replace(";", ",").replace("^", "**")
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        raise ParseError(f"syntax error: {exc.msg}", text, exc.lineno or 1, (exc.offset or 1) - 1) from None
    return _convert(tree.body, names, consts, text, allow_params)


_PARAM_RE = re.compile(r"^c(\d+)$")


def _convert(node, names, consts, text, allow_params) -> Expr:
    def err(msg, n):
        raise ParseError(msg, text, getattr(n, "lineno", 1), getattr(n, "col_offset", 0))

    def go(n) -> Expr:
        if isinstance(n, ast.Constant):
            if isinstance(n.value, bool) or not isinstance(n.value, (int, float)):
                err("expected a number", n)
            return const(float(n.value))
        if isinstance(n, ast.Name):
            if n.id in names:
                return names[n.id]
            if n.id in consts:
                return const(float(consts[n.id]))
            m = _PARAM_RE.match(n.id)
            if m and allow_params:
                return param(int(m.group(1)))
            err(f"unknown identifier '{n.id}'", n)
        if isinstance(n, ast.UnaryOp):
            inner = go(n.operand)
            if isinstance(n.op, ast.USub):
                if inner.op == "const" and not inner.data[1]:
                    return const(-inner.data[0])
                return -inner
            if isinstance(n.op, ast.UAdd):
                return inner
            err("unsupported unary operator", n)
        if isinstance(n, ast.BinOp):
            a, b = go(n.left), go(n.right)
            if isinstance(n.op, ast.Add):
                return a + b
            if isinstance(n.op, ast.Sub):
                return a - b
            if isinstance(n.op, ast.Mult):
                return a * b
            if isinstance(n.op, ast.Div):
                return a / b
            if isinstance(n.op, ast.Pow):
                if b.op != "const":
                    err("exponent must be a constant integer", n.right)
                k = b.data[0]
                if k != int(k) or k < 0:
                    err("exponent must be a non-negative integer", n.right)
                return a ** int(k)
            err("unsupported operator", n)
        if isinstance(n, ast.Call) and isinstance(n.func, ast.Name):
            f = n.func.id
            if n.keywords:
                err("keyword arguments are not supported", n)
            args = n.args
            if f in _FUNCS1:
                if len(args) != 1:
                    err(f"{f} takes one argument", n)
                return Expr(f, (go(args[0]),))
            if f in _FUNCS2:
                if len(args) != 2:
                    err(f"{f} takes two arguments", n)
                return Expr(f, (go(args[0]), go(args[1])))
            if f == "sat":
                if len(args) != 3:
                    err("sat takes (lo, hi; arg)", n)
                lo, hi = go(args[0]), go(args[1])
                if lo.op != "const" or hi.op != "const":
                    err("sat bounds must be numbers", n)
                if lo.data[0] > hi.data[0]:
                    err("sat bounds out of order", n)
                return Expr("sat", (go(args[2]),), (lo.data[0], hi.data[0]))
            if f == "tc":
                v = go(args[0]) if len(args) == 1 else None
                if v is None or v.op != "const":
                    err("tc takes one numeric literal", n)
                return const(v.data[0], tunable=True)
            err(f"unknown function '{f}'", n)
        err(f"unsupported syntax '{type(n).__name__}'", n)

    return go(node)
