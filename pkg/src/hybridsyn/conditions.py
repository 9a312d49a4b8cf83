"""Compile Lyapunov-barrier requirements into standard-form formulas.

A formula reads ``forall x in X: AND_i OR_j f_ij(x) <= 0``. Each condition
group is a list of branches (one per cell of the domain and per jump/flow
piece); a group holds iff all its branches hold. Jump targets are substituted
symbolically, so every expression is over the state ``s`` and the
disturbance ``d`` only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .expr import (Expr, ExprError, as_expr, bind_params, const, diff, eval_many, expand, free_vars,
                   is_smooth, maximum, simplify, substitute, to_text)
from .expr.core import nodes
from .hybrid import Cell, ClosedLoop, CoordSet, Guard, JumpPiece, Regions, SpecSets, membership_formulas

RWS_GROUPS = 6
RSWS_GROUPS = 12

GROUP_LABELS = {
    1: "V <= 0 on I",
    2: "V > 0 on boundary of S_x",
    3: "jumps from A* stay in S",
    4: "flow decrease on A*",
    5: "system-jump decrease on A*",
    6: "timer jumps do not increase V on A*",
    7: "jumps from O* stay in S",
    8: "flow decrease on O*",
    9: "system-jump decrease on O*",
    10: "timer jumps do not increase V on O*",
    11: "V > beta on boundary of O_x",
    12: "jumps from B land in B",
}

EQ_TOL = 1e-6  # margin used when refuting an equality guard
MAX_SIGN_SPLITS = 3  # per row; each split doubles the row
_SLOT = 2_000_000  # placeholder variable standing in for a sign() node


class NonsmoothV(ValueError):
    pass


@dataclass(frozen=True)
class SpecConfig:
    """Which requirements to certify and the robustness margins.

    ``beta`` fixes the reach-and-stay level; ``None`` lets synthesis tune it.
    """

    kind: str = "rws"  # rws | rsws | rsws+zeno
    gamma_c: float = 1e-2
    gamma_d: float = 1e-2
    c: float = 1e-2
    persistent_flow: bool = False
    beta: float | None = None
    beta_init: float = -1.0

    def __post_init__(self):
        if self.kind not in ("rws", "rsws", "rsws+zeno"):
            raise ValueError(f"unknown specification kind {self.kind!r}")
        if min(self.gamma_c, self.gamma_d, self.c) < 0:
            raise ValueError("margins must be non-negative")

    @property
    def reach_and_stay(self) -> bool:
        return self.kind.startswith("rsws")


@dataclass(eq=False)
class StandardFormula:
    """One branch: a cell, side constraints ``g <= 0`` and the clause matrix."""

    group: int
    label: str
    cell: Cell
    dist_lo: tuple[float, ...]
    dist_hi: tuple[float, ...]
    constraints: tuple[Expr, ...]
    clauses: tuple[tuple[Expr, ...], ...]
    piece: str = ""
    expand_rows: bool = False

    @property
    def nstate(self) -> int:
        return len(self.cell.lo)

    @property
    def nvars(self) -> int:
        return self.nstate + len(self.dist_lo)

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.cell.lo + tuple(self.dist_lo), dtype=float)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.cell.hi + tuple(self.dist_hi), dtype=float)

    @property
    def key(self) -> tuple:
        """Formulas sharing a key differ only in their domain cell."""
        return (self.constraints, self.clauses)

    def exprs(self):
        yield from self.constraints
        for row in self.clauses:
            yield from row

    def specialize(self, params: Sequence[float] = ()) -> "Specialized":
        return specialize(self, params)

    def dump(self, params: Sequence[float] = ()) -> str:
        sp = self.specialize(params)
        lines = [f"# phi{self.group} [{self.label}] {self.cell.tag} {self.piece}".rstrip()]
        lines.append("domain: " + ", ".join(f"x{i + 1} in [{a:.6g}, {b:.6g}]"
                                             for i, (a, b) in enumerate(zip(sp.lo, sp.hi))))
        for g in sp.constraints:
            lines.append(f"where {to_text(g, _xname)} <= 0")
        for row in sp.clauses:
            lines.append(" or ".join(f"{to_text(f, _xname)} <= 0" for f in row))
        if sp.trivial:
            lines.append("true")
        return "\n".join(lines)


def _xname(i: int) -> str:
    return f"x{i + 1}"


@dataclass(eq=False)
class Specialized:
    """A branch with its cell substituted and parameters bound (prover input)."""

    lo: np.ndarray
    hi: np.ndarray
    constraints: tuple[Expr, ...]
    clauses: tuple[tuple[Expr, ...], ...]
    trivial: bool  # no rows left: holds everywhere
    empty: bool  # some side constraint is a positive constant: empty domain


def _is_num(e: Expr) -> bool:
    return e.op == "const"


def specialize(f: StandardFormula, params: Sequence[float] = (), exact: bool = False) -> Specialized:
    """Substitute the cell's fixed coordinates and fold constants.

    With ``exact`` the clause values are preserved (positive constants kept,
    no case splits), so ``max_i min_j`` matches the original formula pointwise.
    """
    sub = f.cell.substitution()
    lo, hi = f.lo.copy(), f.hi.copy()
    for j, _ in f.cell.links:
        lo[j] = hi[j] = 0.0

    def prep(e: Expr, do_expand=False) -> Expr:
        e = substitute(e, sub)
        if len(params):
            e = bind_params(e, params)
        if do_expand:
            e = expand(e)
        return simplify(e)

    cons = []
    empty = False
    for g in f.constraints:
        g = prep(g)
        if _is_num(g):
            if g.data[0] > 0:
                empty = True
            continue
        cons.append(g)
    rows = []
    for row in f.clauses:
        kept = []
        done = False
        cmin = np.inf
        for e in row:
            e = prep(e, f.expand_rows)
            if _is_num(e):
                if e.data[0] <= 0:
                    done = True
                    break
                cmin = min(cmin, e.data[0])
                continue
            kept.append(e)
        if done:
            continue
        if exact:
            rows.append(tuple(kept) + ((const(cmin),) if np.isfinite(cmin) else ()))
        else:
            rows.extend(split_signs(tuple(kept)) if kept else [(const(1.0),)])
    used: set[int] = set()
    for e in cons:
        used |= free_vars(e)
    for row in rows:
        for e in row:
            used |= free_vars(e)
    for i in range(len(lo)):
        if i not in used:
            lo[i] = hi[i] = 0.5 * (lo[i] + hi[i])
    return Specialized(lo, hi, tuple(cons), tuple(rows), trivial=not rows or empty, empty=empty)


def _replace(e: Expr, target: Expr, new: Expr) -> Expr:
    memo: dict[Expr, Expr] = {}

    def go(n: Expr) -> Expr:
        if n == target:
            return new
        hit = memo.get(n)
        if hit is None:
            args = tuple(go(a) for a in n.args)
            hit = n if args == n.args else Expr(n.op, args, n.data)
            memo[n] = hit
        return hit

    return simplify(go(e))


def _affine_in(e: Expr, node: Expr) -> bool:
    z = _replace(e, node, Expr("var", (), (_SLOT,)))
    try:
        d2 = simplify(diff(diff(z, _SLOT), _SLOT))
    except ExprError:
        return False
    return d2.op == "const" and d2.data[0] == 0.0


def _split_node(r: tuple[Expr, ...]):
    seen = [set(nodes(e)) for e in r]
    for k, e in enumerate(r):
        for n in seen[k]:
            if n.op not in ("sat", "sign") or not free_vars(n.args[0]):
                continue
            if n.op == "sat":
                return k, n
            if n.op == "sign" and sum(n in o for o in seen) == 1 and _affine_in(e, n):
                return k, n
    return None


def split_signs(row: tuple[Expr, ...]) -> list[tuple[Expr, ...]]:
    """Case split on ``sign(g)`` and ``sat(lo, hi; g)`` nodes of a row.

    ``OR_j e_j(sign(g)) <= 0`` becomes the two rows ``OR(e_j(1), g)`` and
    ``OR(e_j(-1), -g)``. When ``e`` is affine in the sign value, the pair
    implies the original on the closure, including the set-valued surface
    ``g = 0``, while interval enclosures no longer decouple the sign from
    terms that cancel on that surface. A saturation is split into its three
    linear regimes; it is continuous, so the cases cover the closure exactly.
    """
    out = [row]
    for _ in range(MAX_SIGN_SPLITS):
        nxt = []
        changed = False
        for r in out:
            cand = _split_node(r)
            if cand is None:
                nxt.append(r)
                continue
            k, n = cand
            g = n.args[0]
            if n.op == "sign":
                for v, side in ((1.0, g), (-1.0, simplify(-g))):
                    e = _replace(r[k], n, const(v))
                    nxt.append(r[:k] + (e,) + r[k + 1:] + (side,))
            else:
                lo, hi = n.data
                cases = ((const(lo), (simplify(const(lo) - g),)),
                         (g, (simplify(g - const(lo)), simplify(const(hi) - g))),
                         (const(hi), (simplify(g - const(hi)),)))
                for new, sides in cases:
                    nxt.append(tuple(_replace(e, n, new) for e in r) + sides)
            changed = True
        out = nxt
        if not changed:
            break
    return out


def apply_links(f: StandardFormula, X: np.ndarray) -> np.ndarray:
    """Fill coupled coordinates of sample points (``X`` is ``(nvars, p)``)."""
    for j, e in f.cell.links:
        X[j] = eval_many(e, X)
    return X


@dataclass
class ConditionSet:
    spec: str  # "rws" or "rsws"
    groups: list[list[StandardFormula]]
    cl: ClosedLoop
    sets: SpecSets
    V: Expr
    gamma_c: float
    gamma_d: float
    c: float
    beta: Expr | None = None
    persistent_flow: bool = False
    regions: Regions | None = None
    extra: dict[str, list[StandardFormula]] = field(default_factory=dict)

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    def formulas(self):
        for g in self.groups:
            yield from g

    def dump(self, params: Sequence[float] = ()) -> str:
        return "\n\n".join(f.dump(params) for f in self.formulas())


# ---------------------------------------------------------------------------
# building blocks


def lie_derivative(V: Expr, flow: Sequence[Expr]) -> Expr:
    terms = []
    for i, fi in enumerate(flow):
        if fi.op == "const" and fi.data[0] == 0.0:
            continue
        dv = diff(V, i)
        if dv.op == "const" and dv.data[0] == 0.0:
            continue
        terms.append(dv if (fi.op == "const" and fi.data[0] == 1.0) else dv * fi)
    if not terms:
        return const(0.0)
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out


def _restrict(cell: Cell, guard: Guard) -> Cell | None:
    lo, hi = list(cell.lo), list(cell.hi)
    for i, v in guard.when:
        if not lo[i] <= v <= hi[i]:
            return None
        lo[i] = hi[i] = float(v)
    tag = cell.tag
    return Cell(tuple(lo), tuple(hi), cell.links, tag)


def _pieces(cells: Sequence[Cell], guards: Sequence[Guard]) -> list[tuple[int, Cell, Guard]]:
    out = []
    for k, g in enumerate(guards):
        for c in cells:
            r = _restrict(c, g)
            if r is not None:
                out.append((k, r, g))
    return out


def containment(target: Sequence[Expr], coords: Sequence[CoordSet], idx: Sequence[int]) -> list[Expr]:
    """Constraints ``b_k(x2) <= 0`` encoding ``x2 in prod(coords)`` over ``idx``."""
    out = []
    for i in idx:
        c, x2 = coords[i], target[i]
        if c.is_finite:
            prod = None
            for v in c.values:
                t = (x2 - v) ** 2
                prod = t if prod is None else prod * t
            out.append(prod)
        else:
            out.append(const(c.lo) - x2)
            out.append(x2 - c.hi)
    return out


def _dist(cl: ClosedLoop):
    return tuple(cl.system.dist_lo), tuple(cl.system.dist_hi)


def _make(group, cells_guards, cl, constraints_fn, rows_fn, piece_name, expand_rows=False):
    dl, dh = _dist(cl)
    out = []
    for k, cell, guard in cells_guards:
        cons = tuple(constraints_fn(guard))
        rows = tuple(tuple(r) for r in rows_fn(k))
        out.append(StandardFormula(group, GROUP_LABELS.get(group, ""), cell, dl, dh, cons, rows,
                                   piece_name(k), expand_rows))
    return out


def _check_V(V: Expr, n: int) -> None:
    if not is_smooth(V):
        raise NonsmoothV("V must not contain sign, sat, min or max")
    bad = [i for i in free_vars(V) if i >= n]
    if bad:
        raise ValueError(f"V refers to variable {bad[0]} outside the state")


def _all_guards(jumps: Sequence[JumpPiece]) -> list[Guard]:
    return [j.guard for j in jumps]


# ---------------------------------------------------------------------------
# condition sets


def compile_rws(cl: ClosedLoop, sets: SpecSets, V: Expr, gamma_c: float = 1e-2,
                gamma_d: float = 1e-2, c: float = 1e-2, persistent_flow: bool = False) -> ConditionSet:
    p = cl.partition
    _check_V(V, cl.n)
    if persistent_flow:
        gamma_d = 0.0
    R = membership_formulas(sets, p)
    esc = -V + c  # outside A (V > 0 made non-strict)
    groups: list[list[StandardFormula]] = []

    groups.append(_make(1, [(0, cell, Guard()) for cell in R.initial], cl,
                        lambda g: (), lambda k: [[V]], lambda k: ""))
    groups.append(_make(2, [(0, cell, Guard()) for cell in R.safe_boundary], cl,
                        lambda g: (), lambda k: [[-V + c]], lambda k: ""))

    jumps = cl.all_jumps
    s_idx = list(p.xs) + list(p.qs)
    targets = [substitute_vec(j.reset, V) for j in jumps]

    def jump_rows_contain(k):
        return [[esc, b] for b in containment(jumps[k].reset, R.safe_coords, s_idx)]

    groups.append(_make(3, _pieces(R.safe_minus_goal, _all_guards(jumps)), cl,
                        lambda g: g.constraints, jump_rows_contain, lambda k: jumps[k].name))

    fsets = list(cl.flow_set) or [Guard()]
    lfv = lie_derivative(V, cl.flow)
    groups.append(_make(4, _pieces(R.safe_minus_goal, fsets), cl,
                        lambda g: g.constraints, lambda k: [[esc, lfv + gamma_c]],
                        lambda k: f"flow{k + 1}" if len(fsets) > 1 else ""))

    ns = len(cl.jumps)
    groups.append(_make(5, _pieces(R.safe_minus_goal, _all_guards(cl.jumps)), cl,
                        lambda g: g.constraints, lambda k: [[esc, targets[k] - V + gamma_d]],
                        lambda k: jumps[k].name, expand_rows=True))
    groups.append(_make(6, _pieces(R.safe_minus_goal, _all_guards(cl.timer_jumps)), cl,
                        lambda g: g.constraints, lambda k: [[esc, targets[ns + k] - V]],
                        lambda k: jumps[ns + k].name, expand_rows=True))
    return ConditionSet("rws", groups, cl, sets, V, gamma_c, gamma_d, c,
                        persistent_flow=persistent_flow, regions=R)


def substitute_vec(target: Sequence[Expr], V: Expr) -> Expr:
    """``V(x2)`` with ``x2 := target`` (a full state vector)."""
    return substitute(V, {i: t for i, t in enumerate(target)})


def compile_rsws(base: ConditionSet, beta) -> ConditionSet:
    """Add the reach-and-stay groups for the sublevel set ``B = {V <= beta} ∩ O``."""
    cl, V, c, R = base.cl, base.V, base.c, base.regions
    p = cl.partition
    beta = as_expr(beta)
    inside_b = V - beta + c  # disjunct: strictly inside B, outside O*
    outside_b = -V + beta + c  # disjunct: strictly outside B
    jumps = cl.all_jumps
    ns = len(cl.jumps)
    s_idx = list(p.xs) + list(p.qs)
    targets = [substitute_vec(j.reset, V) for j in jumps]
    groups = [list(g) for g in base.groups[:RWS_GROUPS]]

    groups.append(_make(7, _pieces(R.goal, _all_guards(jumps)), cl, lambda g: g.constraints,
                        lambda k: [[inside_b, b] for b in containment(jumps[k].reset, R.safe_coords, s_idx)],
                        lambda k: jumps[k].name))
    fsets = list(cl.flow_set) or [Guard()]
    lfv = lie_derivative(V, cl.flow)
    groups.append(_make(8, _pieces(R.goal, fsets), cl, lambda g: g.constraints,
                        lambda k: [[inside_b, lfv + base.gamma_c]],
                        lambda k: f"flow{k + 1}" if len(fsets) > 1 else ""))
    groups.append(_make(9, _pieces(R.goal, _all_guards(cl.jumps)), cl, lambda g: g.constraints,
                        lambda k: [[inside_b, targets[k] - V + base.gamma_d]],
                        lambda k: jumps[k].name, expand_rows=True))
    groups.append(_make(10, _pieces(R.goal, _all_guards(cl.timer_jumps)), cl, lambda g: g.constraints,
                        lambda k: [[inside_b, targets[ns + k] - V]],
                        lambda k: jumps[ns + k].name, expand_rows=True))
    groups.append(_make(11, [(0, cell, Guard()) for cell in R.goal_boundary], cl,
                        lambda g: (), lambda k: [[outside_b]], lambda k: ""))

    def rows12(k):
        rows = [[outside_b, targets[k] - beta]]
        rows += [[outside_b, b] for b in containment(jumps[k].reset, R.goal_coords, s_idx)]
        return rows

    groups.append(_make(12, _pieces(R.goal, _all_guards(jumps)), cl, lambda g: g.constraints,
                        rows12, lambda k: jumps[k].name, expand_rows=True))
    return ConditionSet("rsws", groups, cl, base.sets, V, base.gamma_c, base.gamma_d, c, beta,
                        base.persistent_flow, R, dict(base.extra))


def zeno_condition(cl: ClosedLoop, sets: SpecSets, V: Expr, beta, c: float = 1e-2) -> list[StandardFormula]:
    """``B ∩ D_s`` is empty: on ``O ∩ D_s`` the value of ``V`` exceeds ``beta``."""
    R = membership_formulas(sets, cl.partition)
    beta = as_expr(beta)
    return _make(0, _pieces(R.goal, _all_guards(cl.jumps)), cl, lambda g: g.constraints,
                 lambda k: [[-V + beta + c]], lambda k: cl.jumps[k].name)


def _not_in(guard: Guard, x2: Sequence[Expr], c: float) -> list[Expr]:
    """Disjuncts whose satisfaction places ``x2`` outside the guard region."""
    out = [-substitute(g, {i: t for i, t in enumerate(x2)}) + c for g in guard.constraints]
    for i, v in guard.when:
        d = x2[i] - v
        out.append(-maximum(d, -d) + EQ_TOL)
    return out


def assumption_restricted_jumps(cl: ClosedLoop, sets: SpecSets, c: float = 1e-2) -> list[StandardFormula]:
    """Every jump from ``S ∩ D`` lands outside ``D`` (no jump follows a jump)."""
    R = membership_formulas(sets, cl.partition)
    jumps = cl.all_jumps

    def rows(k):
        x2 = jumps[k].reset
        return [_not_in(other.guard, x2, c) or [const(1.0)] for other in jumps]

    out = _make(0, _pieces(R.safe, _all_guards(jumps)), cl, lambda g: g.constraints,
                rows, lambda k: jumps[k].name)
    for f in out:
        f.label = "restricted jumps"
    return out


def group_count(spec: str) -> int:
    return RSWS_GROUPS if spec.startswith("rsws") else RWS_GROUPS


def compile_spec(cl: ClosedLoop, sets: SpecSets, V: Expr, spec: str = "rws", beta=None,
                 gamma_c: float = 1e-2, gamma_d: float = 1e-2, c: float = 1e-2,
                 persistent_flow: bool = False) -> ConditionSet:
    cs = compile_rws(cl, sets, V, gamma_c, gamma_d, c, persistent_flow)
    if spec.startswith("rsws"):
        if beta is None:
            raise ValueError("reach-and-stay needs a beta")
        cs = compile_rsws(cs, beta)
        if spec.endswith("zeno"):
            cs.extra["zeno"] = zeno_condition(cl, sets, V, beta, c)
    if persistent_flow:
        cs.extra["restricted_jumps"] = assumption_restricted_jumps(cl, sets, c)
    return cs
