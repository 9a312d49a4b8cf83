"""Jump-flow systems with a continuous / discrete / timer state partition.

Variable layout of open-loop expressions: ``s`` occupies ``0..n-1``, inputs
``u`` follow at ``n..n+m-1`` and disturbances ``d`` at ``n+m..``. Closing the
loop removes the inputs, so closed-loop expressions see ``s`` then ``d``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .expr import Expr, const, free_vars, maximum, minimum, sat, substitute, var


class ModelError(ValueError):
    pass


class DimensionMismatch(ModelError):
    pass


class EmptyInterior(ModelError):
    pass


@dataclass(frozen=True)
class StatePartition:
    nx: int
    nq: int = 0
    nt: int = 0
    eta: tuple[float, ...] = ()

    def __post_init__(self):
        if min(self.nx, self.nq, self.nt) < 0:
            raise ModelError("negative partition dimension")
        if len(self.eta) != self.nt:
            raise ModelError(f"need {self.nt} timer periods, got {len(self.eta)}")
        if any(e <= 0 for e in self.eta):
            raise ModelError("timer periods must be positive")

    @property
    def n(self) -> int:
        return self.nx + self.nq + self.nt

    @property
    def xs(self) -> range:
        return range(self.nx)

    @property
    def qs(self) -> range:
        return range(self.nx, self.nx + self.nq)

    @property
    def ts(self) -> range:
        return range(self.nx + self.nq, self.n)


@dataclass(frozen=True)
class Guard:
    """Region ``{s : g(s) <= 0 for all g, s[i] == v for all (i, v) in when}``."""

    constraints: tuple[Expr, ...] = ()
    when: tuple[tuple[int, float], ...] = ()

    def subs(self, mapping: dict[int, Expr]) -> "Guard":
        return Guard(tuple(substitute(g, mapping) for g in self.constraints), self.when)


@dataclass(frozen=True)
class JumpPiece:
    guard: Guard
    reset: tuple[Expr, ...]  # new (s_x, s_q)
    name: str = ""


@dataclass(frozen=True)
class OpenLoopSystem:
    partition: StatePartition
    flow: tuple[Expr, ...]  # F_ol,x over (s, u, d)
    m: int = 0
    input_lo: tuple[float, ...] = ()
    input_hi: tuple[float, ...] = ()
    dist_lo: tuple[float, ...] = ()
    dist_hi: tuple[float, ...] = ()
    jumps: tuple[JumpPiece, ...] = ()
    timer_reset: tuple[Expr, ...] | None = None  # G_ol,t; identity when None
    flow_set: tuple[Guard, ...] = ()  # union of pieces; empty means everywhere
    output: tuple[Expr, ...] | None = None  # h(s); identity when None

    def __post_init__(self):
        p = self.partition
        if len(self.flow) != p.nx:
            raise DimensionMismatch(f"flow has {len(self.flow)} components, n_x = {p.nx}")
        if len(self.input_lo) != self.m or len(self.input_hi) != self.m:
            raise DimensionMismatch("input bounds must have one entry per input")
        if len(self.dist_lo) != len(self.dist_hi):
            raise DimensionMismatch("disturbance bounds differ in length")
        if any(a > b for a, b in zip(self.input_lo, self.input_hi)):
            raise ModelError("input lower bound above upper bound")
        if any(a > b for a, b in zip(self.dist_lo, self.dist_hi)):
            raise ModelError("disturbance lower bound above upper bound")
        for j in self.jumps:
            if len(j.reset) != p.nx + p.nq:
                raise DimensionMismatch(f"jump '{j.name}' maps to {len(j.reset)} components, expected {p.nx + p.nq}")
        if self.timer_reset is not None and len(self.timer_reset) != p.nx + p.nq:
            raise DimensionMismatch("timer reset map has the wrong length")
        limit = p.n + self.m + self.k
        for e in self.all_exprs():
            bad = [i for i in free_vars(e) if i >= limit]
            if bad:
                raise DimensionMismatch(f"variable index {bad[0]} out of range")

    @property
    def n(self) -> int:
        return self.partition.n

    @property
    def k(self) -> int:
        return len(self.dist_lo)

    @property
    def outputs(self) -> tuple[Expr, ...]:
        return self.output if self.output is not None else tuple(var(i) for i in range(self.n))

    def all_exprs(self):
        yield from self.flow
        for j in self.jumps:
            yield from j.reset
            yield from j.guard.constraints
        if self.timer_reset is not None:
            yield from self.timer_reset
        for g in self.flow_set:
            yield from g.constraints


@dataclass(frozen=True)
class ClosedLoop:
    """Closed-loop data over ``(s, d)``: ``d_j`` is variable ``n + j``."""

    system: OpenLoopSystem
    kappa: tuple[Expr, ...]
    inputs: tuple[Expr, ...]  # saturated u(s)
    flow: tuple[Expr, ...]  # full n-vector (F_x, 0, 1)
    jumps: tuple[JumpPiece, ...]  # full n-vector resets, timers held
    timer_jumps: tuple[JumpPiece, ...]  # one per timer
    flow_set: tuple[Guard, ...]

    @property
    def partition(self) -> StatePartition:
        return self.system.partition

    @property
    def n(self) -> int:
        return self.system.n

    @property
    def k(self) -> int:
        return self.system.k

    @property
    def all_jumps(self) -> tuple[JumpPiece, ...]:
        return self.jumps + self.timer_jumps


def saturate(e: Expr, lo: float, hi: float) -> Expr:
    if np.isfinite(lo) and np.isfinite(hi):
        return sat(lo, hi, e)
    if np.isfinite(lo):
        return maximum(const(lo), e)
    if np.isfinite(hi):
        return minimum(const(hi), e)
    return e


def close_loop(sys: OpenLoopSystem, kappa: Sequence[Expr]) -> ClosedLoop:
    """Substitute ``u := sat(kappa(h(s)))`` everywhere; disturbances stay free.

    ``kappa`` is written over the outputs ``y = h(s)`` (variable ``j`` is ``y_j``).
    """
    kappa = tuple(kappa)
    if len(kappa) != sys.m:
        raise DimensionMismatch(f"controller has {len(kappa)} components, system has {sys.m} inputs")
    h = sys.outputs
    for kp in kappa:
        bad = [i for i in free_vars(kp) if i >= len(h)]
        if bad:
            raise DimensionMismatch(f"controller refers to output {bad[0] + 1} of {len(h)}")
    ymap = {j: hj for j, hj in enumerate(h)}
    u = tuple(saturate(substitute(kp, ymap), lo, hi)
              for kp, lo, hi in zip(kappa, sys.input_lo, sys.input_hi))
    n, m, p = sys.n, sys.m, sys.partition
    mapping = {n + i: ui for i, ui in enumerate(u)}
    mapping.update({n + m + j: var(n + j) for j in range(sys.k)})

    def cl(e: Expr) -> Expr:
        return substitute(e, mapping)

    flow = tuple(cl(f) for f in sys.flow) + (const(0.0),) * p.nq + (const(1.0),) * p.nt
    timers = tuple(var(i) for i in p.ts)
    jumps = tuple(JumpPiece(j.guard.subs(mapping), tuple(cl(r) for r in j.reset) + timers, j.name)
                  for j in sys.jumps)
    treset = sys.timer_reset if sys.timer_reset is not None else tuple(var(i) for i in range(p.nx + p.nq))
    tjumps = []
    for k, ti in enumerate(p.ts):
        new_t = tuple(const(0.0) if tj == ti else var(tj) for tj in p.ts)
        tjumps.append(JumpPiece(Guard((), ((ti, p.eta[k]),)),
                                tuple(cl(r) for r in treset) + new_t, f"timer{k + 1}"))
    fset = tuple(g.subs(mapping) for g in sys.flow_set)
    return ClosedLoop(sys, kappa, u, flow, jumps, tuple(tjumps), fset)


def build_sampled_data(sys: OpenLoopSystem, eta: float) -> OpenLoopSystem:
    """Sampled-data model: held copy of ``s_x`` as discrete state plus one timer.

    ``F = (f(s_x, u), 0, 1)``, timer jump ``G = (s_x, s_x, 0)`` at ``s_t = eta``
    and ``h(s) = s_q``.
    """
    p = sys.partition
    if p.nq or p.nt or sys.jumps:
        raise ModelError("sampled-data wrapper expects a pure flow system")
    if eta <= 0:
        raise ModelError("sampling period must be positive")
    nx, m, k = p.nx, sys.m, sys.k
    n_new = 2 * nx + 1
    mapping = {nx + i: var(n_new + i) for i in range(m)}
    mapping.update({nx + m + j: var(n_new + m + j) for j in range(k)})
    flow = tuple(substitute(f, mapping) for f in sys.flow)
    held = tuple(var(i) for i in range(nx))
    if sys.output is not None:
        out = tuple(substitute(h, {i: var(nx + i) for i in range(nx)}) for h in sys.output)
    else:
        out = tuple(var(nx + i) for i in range(nx))
    return OpenLoopSystem(
        partition=StatePartition(nx, nx, 1, (float(eta),)),
        flow=flow, m=m, input_lo=sys.input_lo, input_hi=sys.input_hi,
        dist_lo=sys.dist_lo, dist_hi=sys.dist_hi,
        timer_reset=held + held, output=out,
    )


# ---------------------------------------------------------------------------
# specification sets


@dataclass(frozen=True)
class CoordSet:
    """Per-coordinate set: a closed interval or a finite set of values."""

    lo: float
    hi: float
    values: tuple[float, ...] | None = None

    @staticmethod
    def box(lo: float, hi: float) -> "CoordSet":
        if lo > hi:
            raise ModelError(f"empty interval [{lo}, {hi}]")
        return CoordSet(float(lo), float(hi))

    @staticmethod
    def finite(values: Sequence[float]) -> "CoordSet":
        vals = tuple(sorted({float(v) for v in values}))
        if not vals:
            raise ModelError("empty finite set")
        return CoordSet(vals[0], vals[-1], vals)

    @property
    def is_finite(self) -> bool:
        return self.values is not None

    def contains(self, x: float, tol: float = 0.0) -> bool:
        if self.is_finite:
            return any(abs(x - v) <= tol for v in self.values)
        return self.lo - tol <= x <= self.hi + tol

    def subset_of(self, other: "CoordSet") -> bool:
        if self.is_finite:
            return all(other.contains(v) for v in self.values)
        if other.is_finite:
            return self.lo == self.hi and other.contains(self.lo)
        return other.lo <= self.lo and self.hi <= other.hi

    def minus(self, other: "CoordSet") -> list["CoordSet"]:
        """Closed pieces covering ``self \\ other`` (boundary overlap allowed)."""
        if self.is_finite:
            rest = [v for v in self.values if not other.contains(v)]
            return [CoordSet.finite(rest)] if rest else []
        if other.is_finite:
            # removing finitely many points leaves the closure unchanged
            return [self] if self.hi > self.lo else ([] if other.contains(self.lo) else [self])
        out = []
        if other.lo > self.lo:
            out.append(CoordSet(self.lo, min(other.lo, self.hi)))
        if other.hi < self.hi:
            out.append(CoordSet(max(other.hi, self.lo), self.hi))
        return out


@dataclass(frozen=True)
class SpecSets:
    sx_lo: tuple[float, ...]
    sx_hi: tuple[float, ...]
    ix_lo: tuple[float, ...]
    ix_hi: tuple[float, ...]
    ox_lo: tuple[float, ...]
    ox_hi: tuple[float, ...]
    sq: tuple[CoordSet, ...] = ()
    oq: tuple[CoordSet, ...] = ()
    iq: tuple[CoordSet, ...] | None = None  # defaults to sq
    it: tuple[CoordSet, ...] | None = None  # defaults to T
    init_links: tuple[tuple[int, int], ...] = ()  # (state j, state i): s_j = s_i in I

    def check(self, p: StatePartition) -> None:
        for name, arr in (("S_x", self.sx_lo), ("S_x", self.sx_hi), ("I_x", self.ix_lo),
                          ("I_x", self.ix_hi), ("O_x", self.ox_lo), ("O_x", self.ox_hi)):
            if len(arr) != p.nx:
                raise DimensionMismatch(f"{name} has dimension {len(arr)}, n_x = {p.nx}")
        if len(self.sq) != p.nq or len(self.oq) != p.nq:
            raise DimensionMismatch("discrete safe/goal sets must cover every discrete state")
        if self.iq is not None and len(self.iq) != p.nq:
            raise DimensionMismatch("discrete initial set has the wrong dimension")
        if self.it is not None and len(self.it) != p.nt:
            raise DimensionMismatch("initial timer set has the wrong dimension")
        for i in range(p.nx):
            if not self.sx_lo[i] <= self.sx_hi[i]:
                raise ModelError("S_x is empty")
            if not (self.sx_lo[i] <= self.ix_lo[i] <= self.ix_hi[i] <= self.sx_hi[i]):
                raise ModelError(f"I_x not inside S_x along s{i + 1}")
            if not (self.sx_lo[i] <= self.ox_lo[i] <= self.ox_hi[i] <= self.sx_hi[i]):
                raise ModelError(f"O_x not inside S_x along s{i + 1}")
            if not self.ox_lo[i] < self.ox_hi[i]:
                raise EmptyInterior(f"O_x has empty interior along s{i + 1}")
        for a, b in zip(self.oq, self.sq):
            if not a.subset_of(b):
                raise ModelError("O_q must be a subset of S_q")
        for j, i in self.init_links:
            if not (0 <= i < p.n and 0 <= j < p.n):
                raise ModelError("initial coupling refers to a missing state")

    def timer_sets(self, p: StatePartition) -> tuple[CoordSet, ...]:
        return tuple(CoordSet.box(0.0, e) for e in p.eta)

    def safe(self, p: StatePartition) -> list[CoordSet]:
        return ([CoordSet.box(a, b) for a, b in zip(self.sx_lo, self.sx_hi)]
                + list(self.sq) + list(self.timer_sets(p)))

    def goal(self, p: StatePartition) -> list[CoordSet]:
        return ([CoordSet.box(a, b) for a, b in zip(self.ox_lo, self.ox_hi)]
                + list(self.oq) + list(self.timer_sets(p)))

    def initial(self, p: StatePartition) -> list[CoordSet]:
        iq = self.iq if self.iq is not None else self.sq
        it = self.it if self.it is not None else self.timer_sets(p)
        return [CoordSet.box(a, b) for a, b in zip(self.ix_lo, self.ix_hi)] + list(iq) + list(it)


@dataclass(frozen=True)
class Cell:
    """Box over the state; degenerate coordinates are fixed values.

    ``links`` maps a state index to an expression over other states (used for
    the coupled initial set of sampled-data models).
    """

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    links: tuple[tuple[int, Expr], ...] = ()
    tag: str = ""

    def substitution(self) -> dict[int, Expr]:
        out: dict[int, Expr] = {i: const(a) for i, (a, b) in enumerate(zip(self.lo, self.hi)) if a == b}
        linked = dict(self.links)
        for i, e in linked.items():
            out[i] = substitute(e, out)
        return out

    def volume(self) -> float:
        w = [b - a for a, b in zip(self.lo, self.hi) if b > a]
        return float(np.prod(w)) if w else 1.0

    def contains(self, x, tol: float = 1e-12) -> bool:
        return all(a - tol <= xi <= b + tol for xi, a, b in zip(x, self.lo, self.hi))


def expand_coords(coords: Sequence[CoordSet], links=(), tag: str = "") -> list[Cell]:
    """Enumerate finite coordinates; interval coordinates stay as ranges."""
    choices = [[(v, v) for v in c.values] if c.is_finite else [(c.lo, c.hi)] for c in coords]
    out = []
    for combo in itertools.product(*choices):
        lo = tuple(a for a, _ in combo)
        hi = tuple(b for _, b in combo)
        if links:
            lo, hi = list(lo), list(hi)
            for j, _ in links:
                lo[j] = hi[j] = 0.0
            lo, hi = tuple(lo), tuple(hi)
        out.append(Cell(lo, hi, tuple(links), tag))
    return out


def product_difference(a: Sequence[CoordSet], b: Sequence[CoordSet]) -> list[list[CoordSet]]:
    """Cover ``prod(a) \\ prod(b)`` by products (slab decomposition)."""
    pieces = []
    for i in range(len(a)):
        for rest in a[i].minus(b[i]):
            inner = [_intersect(a[j], b[j]) for j in range(i)] + [rest] + list(a[i + 1:])
            if all(c is not None for c in inner):
                pieces.append(inner)
    return pieces


def _intersect(a: CoordSet, b: CoordSet) -> CoordSet | None:
    if a.is_finite or b.is_finite:
        vals = [v for v in (a.values or b.values) if a.contains(v) and b.contains(v)]
        return CoordSet.finite(vals) if vals else None
    lo, hi = max(a.lo, b.lo), min(a.hi, b.hi)
    return CoordSet(lo, hi) if lo <= hi else None


def faces(coords: Sequence[CoordSet], which: Sequence[int], tag: str = "") -> list[Cell]:
    """Boundary faces of the interval coordinates listed in ``which``."""
    out = []
    for i in which:
        c = coords[i]
        sides = [("lo", c.lo), ("hi", c.hi)] if c.hi > c.lo else [("lo", c.lo)]
        for side, v in sides:
            cs = list(coords)
            cs[i] = CoordSet(v, v)
            out.extend(expand_coords(cs, tag=f"{tag}s{i + 1}={side}"))
    return out


@dataclass
class Regions:
    initial: list[Cell]
    safe: list[Cell]
    safe_boundary: list[Cell]
    goal: list[Cell]
    goal_boundary: list[Cell]
    safe_minus_goal: list[Cell]
    safe_coords: list[CoordSet] = field(default_factory=list)
    goal_coords: list[CoordSet] = field(default_factory=list)


def membership_formulas(sets: SpecSets, p: StatePartition) -> Regions:
    """Cells for S, I, O, the boundary faces and S \\ O."""
    sets.check(p)
    S, O, I = sets.safe(p), sets.goal(p), sets.initial(p)
    links = tuple((j, var(i)) for j, i in sets.init_links)
    sm = []
    for k, piece in enumerate(product_difference(S, O)):
        sm.extend(expand_coords(piece, tag=f"slab{k}"))
    return Regions(
        initial=expand_coords(I, links, "I"),
        safe=expand_coords(S, tag="S"),
        safe_boundary=faces(S, list(p.xs), "dS:"),
        goal=expand_coords(O, tag="O"),
        goal_boundary=faces(O, list(p.xs), "dO:"),
        safe_minus_goal=sm,
        safe_coords=S,
        goal_coords=O,
    )
