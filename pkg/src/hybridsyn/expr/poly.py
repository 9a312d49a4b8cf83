"""Polynomial normal form over opaque atoms.

Used where exact cancellation matters to the interval prover, e.g. in
``V(G(s)) - V(s)`` when the jump leaves most coordinates unchanged.
Non-polynomial nodes (transcendental functions, division by a non-constant,
nonsmooth ops) are kept as atoms after normalising their arguments.
"""

from __future__ import annotations

from collections import defaultdict

from .core import Expr, ZERO, _fold, const

Monomial = tuple  # sorted tuple of (atom, power)
Poly = dict  # Monomial -> coefficient


def _mono_mul(a: Monomial, b: Monomial) -> Monomial:
    d: dict = defaultdict(int)
    for atom, k in a:
        d[atom] += k
    for atom, k in b:
        d[atom] += k
    return tuple(sorted(d.items(), key=lambda t: t[0]._hash))


def _padd(p: Poly, q: Poly, s: float = 1.0) -> Poly:
    out = dict(p)
    for m, c in q.items():
        out[m] = out.get(m, 0.0) + s * c
    return {m: c for m, c in out.items() if c != 0.0}


def _pmul(p: Poly, q: Poly) -> Poly:
    out: dict = {}
    for m1, c1 in p.items():
        for m2, c2 in q.items():
            m = _mono_mul(m1, m2)
            out[m] = out.get(m, 0.0) + c1 * c2
    return {m: c for m, c in out.items() if c != 0.0}


def to_poly(e: Expr, memo: dict | None = None) -> Poly:
    memo = {} if memo is None else memo
    hit = memo.get(e)
    if hit is not None:
        return hit
    op = e.op
    if op == "const":
        r = {(): e.data[0]} if e.data[0] != 0.0 else {}
    elif op in ("var", "param"):
        r = {((e, 1),): 1.0}
    elif op == "add":
        r = _padd(to_poly(e.args[0], memo), to_poly(e.args[1], memo))
    elif op == "sub":
        r = _padd(to_poly(e.args[0], memo), to_poly(e.args[1], memo), -1.0)
    elif op == "neg":
        r = {m: -c for m, c in to_poly(e.args[0], memo).items()}
    elif op == "mul":
        r = _pmul(to_poly(e.args[0], memo), to_poly(e.args[1], memo))
    elif op == "pow":
        base = to_poly(e.args[0], memo)
        r = {(): 1.0}
        for _ in range(e.data[0]):
            r = _pmul(r, base)
    elif op == "div" and e.args[1].op == "const" and e.args[1].data[0] != 0.0:
        r = {m: c / e.args[1].data[0] for m, c in to_poly(e.args[0], memo).items()}
    else:
        atom = _fold(Expr(op, tuple(expand(a) for a in e.args), e.data))
        r = {((atom, 1),): 1.0} if atom.op != "const" else ({(): atom.data[0]} if atom.data[0] else {})
    memo[e] = r
    return r


def from_poly(p: Poly) -> Expr:
    terms = []
    for m, c in sorted(p.items(), key=lambda t: (len(t[0]), str(t[0]))):
        t = None
        for atom, k in m:
            f = atom if k == 1 else Expr("pow", (atom,), (k,))
            t = f if t is None else Expr("mul", (t, f))
        if t is None:
            terms.append(const(c))
        elif c == 1.0:
            terms.append(t)
        elif c == -1.0:
            terms.append(Expr("neg", (t,)))
        else:
            terms.append(Expr("mul", (const(c), t)))
    if not terms:
        return ZERO
    out = terms[0]
    for t in terms[1:]:
        out = Expr("add", (out, t))
    return out


def expand(e: Expr) -> Expr:
    """Rewrite ``e`` as a sum of monomials with like terms merged."""
    if e.op in ("const", "var", "param"):
        return e
    return from_poly(to_poly(e))

