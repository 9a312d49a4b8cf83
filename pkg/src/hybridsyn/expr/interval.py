"""Outward-rounded interval evaluation of expression trees.

Everything here is vectorised over a batch of boxes: a box batch is a pair of
arrays ``lo, hi`` of shape ``(n_vars, n_boxes)``. Each arithmetic result is
widened by one ulp in each direction, transcendental ones by two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Expr, ExprError

_INF = np.inf
_TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"invalid interval [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def __contains__(self, x) -> bool:
        if isinstance(x, Interval):
            return self.lo <= x.lo and x.hi <= self.hi
        return self.lo <= x <= self.hi

    def __iter__(self):
        yield self.lo
        yield self.hi


def _dn(x):
    return np.nextafter(x, -_INF)


def _up(x):
    return np.nextafter(x, _INF)


def _clean_lo(x):
    return np.where(np.isnan(x), -_INF, x)


def _clean_hi(x):
    return np.where(np.isnan(x), _INF, x)


def i_add(al, ah, bl, bh):
    return _dn(al + bl), _up(ah + bh)


def i_sub(al, ah, bl, bh):
    return _dn(al - bh), _up(ah - bl)


def i_mul(al, ah, bl, bh):
    p1, p2, p3, p4 = al * bl, al * bh, ah * bl, ah * bh
    ps = np.stack(np.broadcast_arrays(p1, p2, p3, p4))
    # 0 * inf is taken as 0
    ps = np.where(np.isnan(ps), 0.0, ps)
    return _dn(ps.min(axis=0)), _up(ps.max(axis=0))


def i_div(al, ah, bl, bh):
    """Quotient; boxes whose divisor straddles zero get the whole line."""
    zero = (bl <= 0.0) & (bh >= 0.0)
    sbl = np.where(zero, 1.0, bl)
    sbh = np.where(zero, 1.0, bh)
    q1, q2, q3, q4 = al / sbl, al / sbh, ah / sbl, ah / sbh
    qs = np.stack(np.broadcast_arrays(q1, q2, q3, q4))
    qs = np.where(np.isnan(qs), 0.0, qs)
    lo = np.where(zero, -_INF, _dn(qs.min(axis=0)))
    hi = np.where(zero, _INF, _up(qs.max(axis=0)))
    return lo, hi, np.broadcast_to(zero, lo.shape)


def i_pow(al, ah, n: int):
    if n == 0:
        return np.ones_like(al), np.ones_like(ah)
    if n == 1:
        return al, ah
    pl, ph = al ** n, ah ** n
    if n % 2:
        return _dn(pl), _up(ph)
    lo = np.where(al >= 0, pl, np.where(ah <= 0, ph, 0.0))
    hi = np.maximum(pl, ph)
    return np.maximum(_dn(lo), 0.0), _up(hi)


def _periodic(al, ah, fl, fh, max_at: float, min_at: float):
    """Range of a 2*pi periodic function with one max and one min per period."""
    slack = 1e-9 * (1.0 + np.abs(al) + np.abs(ah))
    a, b = al - slack, ah + slack
    kmax = np.ceil((a - max_at) / _TWO_PI)
    has_max = max_at + _TWO_PI * kmax <= b
    kmin = np.ceil((a - min_at) / _TWO_PI)
    has_min = min_at + _TWO_PI * kmin <= b
    full = (ah - al) >= _TWO_PI
    lo = np.where(has_min | full, -1.0, _dn(_dn(np.minimum(fl, fh))))
    hi = np.where(has_max | full, 1.0, _up(_up(np.maximum(fl, fh))))
    bad = ~np.isfinite(al) | ~np.isfinite(ah)
    lo = np.where(bad, -1.0, np.maximum(lo, -1.0))
    hi = np.where(bad, 1.0, np.minimum(hi, 1.0))
    return lo, hi


def i_sin(al, ah):
    with np.errstate(invalid="ignore"):
        return _periodic(al, ah, np.sin(al), np.sin(ah), 0.5 * math.pi, -0.5 * math.pi)


def i_cos(al, ah):
    with np.errstate(invalid="ignore"):
        return _periodic(al, ah, np.cos(al), np.cos(ah), 0.0, math.pi)


def i_exp(al, ah):
    with np.errstate(over="ignore"):
        return np.maximum(_dn(_dn(np.exp(al))), 0.0), _up(_up(np.exp(ah)))


def i_sqrt(al, ah):
    bad = al < 0
    with np.errstate(invalid="ignore"):
        lo = np.sqrt(np.maximum(al, 0.0))
        hi = np.sqrt(np.maximum(ah, 0.0))
    return np.maximum(_dn(lo), 0.0), _up(hi), bad


def i_sign(al, ah):
    lo = np.where(al > 0, 1.0, -1.0)
    hi = np.where(ah < 0, -1.0, 1.0)
    return lo, hi


def i_sat(al, ah, lo_s: float, hi_s: float):
    return np.clip(al, lo_s, hi_s), np.clip(ah, lo_s, hi_s)


def ieval_nodes(e: Expr, lo, hi, params=(), memo: dict | None = None) -> dict:
    """Forward pass; returns ``{node: (lo, hi, flag)}`` for every node of ``e``.

    Passing the same ``memo`` for several expressions over the same boxes
    shares common subexpressions.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    params = np.asarray(params, dtype=float)
    shape = lo.shape[1:]
    memo = {} if memo is None else memo
    no_flag = np.zeros(shape, dtype=bool)

    def go(n: Expr):
        hit = memo.get(n)
        if hit is not None:
            return hit
        op = n.op
        if op == "const":
            v = np.full(shape, n.data[0])
            r = (v, v, no_flag)
        elif op == "var":
            r = (lo[n.data[0]], hi[n.data[0]], no_flag)
        elif op == "param":
            v = np.full(shape, params[n.data[0]])
            r = (v, v, no_flag)
        else:
            ch = [go(a) for a in n.args]
            flag = ch[0][2] if len(ch) == 1 else (ch[0][2] | ch[1][2])
            al, ah = ch[0][0], ch[0][1]
            if op == "add":
                rl, rh = i_add(al, ah, ch[1][0], ch[1][1])
            elif op == "sub":
                rl, rh = i_sub(al, ah, ch[1][0], ch[1][1])
            elif op == "mul":
                rl, rh = i_mul(al, ah, ch[1][0], ch[1][1])
            elif op == "div":
                rl, rh, f = i_div(al, ah, ch[1][0], ch[1][1])
                flag = flag | f
            elif op == "neg":
                rl, rh = -ah, -al
            elif op == "pow":
                rl, rh = i_pow(al, ah, n.data[0])
            elif op == "sin":
                rl, rh = i_sin(al, ah)
            elif op == "cos":
                rl, rh = i_cos(al, ah)
            elif op == "exp":
                rl, rh = i_exp(al, ah)
            elif op == "sqrt":
                rl, rh, f = i_sqrt(al, ah)
                flag = flag | f
            elif op == "min":
                rl, rh = np.minimum(al, ch[1][0]), np.minimum(ah, ch[1][1])
            elif op == "max":
                rl, rh = np.maximum(al, ch[1][0]), np.maximum(ah, ch[1][1])
            elif op == "sign":
                rl, rh = i_sign(al, ah)
            elif op == "sat":
                rl, rh = i_sat(al, ah, *n.data)
            else:
                raise ExprError(f"unknown op {op}")
            r = (_clean_lo(rl), _clean_hi(rh), flag)
        memo[n] = r
        return r

    go(e)
    return memo


def ieval_arrays(e: Expr, lo, hi, params=()):
    """Enclosure over a batch of boxes: returns ``(lo, hi, domain_flag)``.

    ``domain_flag`` marks boxes where a partial function (division, sqrt) may
    have been applied outside its domain; the enclosure then covers only the
    valid part.
    """
    memo = ieval_nodes(e, lo, hi, params)
    return memo[e]


def ieval(e: Expr, box: Sequence, params=()) -> Interval:
    """Enclosure of ``e`` over a single box given as a sequence of intervals."""
    lo = np.array([[float(b[0])] for b in box]) if len(box) else np.zeros((0, 1))
    hi = np.array([[float(b[1])] for b in box]) if len(box) else np.zeros((0, 1))
    rl, rh, _ = ieval_arrays(e, lo, hi, params)
    return Interval(float(rl[0]), float(rh[0]))


# ---------------------------------------------------------------------------
# forward-backward contraction


def _meet(al, ah, pl, ph):
    return np.fmax(al, pl), np.fmin(ah, ph)


def _root(x, n):
    return np.sign(x) * np.abs(x) ** (1.0 / n)


def contract(constraints: Sequence[tuple[Expr, float, float]], lo, hi, params=()):
    """One forward-backward (HC4-revise) pass over the constraint DAG.

    ``constraints`` holds ``(expr, lower, upper)`` triples meaning
    ``lower <= expr <= upper``. Subexpressions shared between constraints
    share one domain, so bounds learned from one constraint tighten the
    others. Returns contracted ``(lo, hi)`` and a mask of boxes proven empty.
    Backward projections are rounded outwards and never cut through a
    possible domain violation, so no feasible point is removed.
    """
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    n_boxes = lo.shape[1]
    empty = np.zeros(n_boxes, dtype=bool)
    if not constraints:
        return lo, hi, empty
    memo: dict = {}
    for expr, _, _ in constraints:
        ieval_nodes(expr, lo, hi, params, memo=memo)
    order = _topo(Expr("tuple", tuple(c[0] for c in constraints)))[1:]
    cur = {n: [memo[n][0].copy() if memo[n][0].ndim else memo[n][0],
               memo[n][1].copy() if memo[n][1].ndim else memo[n][1]] for n in order}
    for expr, tl, th in constraints:
        cur[expr] = list(_meet(cur[expr][0], cur[expr][1], tl, th))
    for n in order:  # parents first
        nl, nh = cur[n]
        empty |= nl > nh
        if not n.args or bool(np.any(memo[n][2])):
            continue
        _backward(n, nl, nh, cur)
    for n in order:
        if n.op == "var":
            i = n.data[0]
            l_, h_ = cur[n]
            lo[i] = np.fmax(lo[i], _dn(l_))
            hi[i] = np.fmin(hi[i], _up(h_))
    empty |= np.any(lo > hi, axis=0)
    return lo, hi, empty


def _topo(e: Expr) -> list[Expr]:
    seen: set = set()
    post: list[Expr] = []
    stack = [(e, False)]
    while stack:
        n, done = stack.pop()
        if done:
            post.append(n)
            continue
        if n in seen:
            continue
        seen.add(n)
        stack.append((n, True))
        for a in n.args:
            if a not in seen:
                stack.append((a, False))
    return post[::-1]


def _set(cur, n, pl, ph):
    al, ah = cur[n]
    pl = np.where(np.isnan(pl), -_INF, _dn(pl))
    ph = np.where(np.isnan(ph), _INF, _up(ph))
    cur[n] = list(_meet(al, ah, pl, ph))


def _backward(n: Expr, nl, nh, cur):
    op, a = n.op, n.args
    with np.errstate(all="ignore"):
        if op == "add":
            bl, bh = cur[a[1]]
            _set(cur, a[0], nl - bh, nh - bl)
            al, ah = cur[a[0]]
            _set(cur, a[1], nl - ah, nh - al)
        elif op == "sub":
            bl, bh = cur[a[1]]
            _set(cur, a[0], nl + bl, nh + bh)
            al, ah = cur[a[0]]
            _set(cur, a[1], al - nh, ah - nl)
        elif op == "neg":
            _set(cur, a[0], -nh, -nl)
        elif op == "mul":
            bl, bh = cur[a[1]]
            ql, qh, z = i_div(nl, nh, bl, bh)
            _set(cur, a[0], np.where(z, -_INF, ql), np.where(z, _INF, qh))
            al, ah = cur[a[0]]
            ql, qh, z = i_div(nl, nh, al, ah)
            _set(cur, a[1], np.where(z, -_INF, ql), np.where(z, _INF, qh))
        elif op == "div":
            bl, bh = cur[a[1]]
            pl, ph = i_mul(nl, nh, bl, bh)
            _set(cur, a[0], pl, ph)
        elif op == "pow":
            k = n.data[0]
            if k < 2:
                return
            if k % 2:
                _set(cur, a[0], _root(nl, k), _root(nh, k))
            else:
                r = np.maximum(nh, 0.0) ** (1.0 / k)
                s = np.maximum(nl, 0.0) ** (1.0 / k)
                al, ah = cur[a[0]]
                pos = al >= 0
                neg = ah <= 0
                pl = np.where(pos, s, -r)
                ph = np.where(neg, -s, r)
                _set(cur, a[0], pl, ph)
                empty_branch = nh < 0
                if np.any(empty_branch):
                    al, ah = cur[a[0]]
                    cur[a[0]] = [np.where(empty_branch, _INF, al), np.where(empty_branch, -_INF, ah)]
        elif op == "exp":
            _set(cur, a[0], np.log(np.maximum(nl, 0.0)), np.where(nh > 0, np.log(np.maximum(nh, 1e-300)), -_INF))
        elif op == "sqrt":
            _set(cur, a[0], np.where(nl > 0, nl * nl, -_INF), nh * nh)
