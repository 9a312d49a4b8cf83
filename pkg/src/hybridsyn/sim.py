"""Hybrid-arc simulation for validation and plots (never part of a proof).

Flows use fixed-step RK4; entering the jump set is located by bisection on
the step length to 1e-9 in time. Timers are stepped exactly onto their
period. Jumps have priority on ``C ∩ D`` unless ``flow_priority`` is set.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .expr import Expr, lambdify
from .hybrid import ClosedLoop, JumpPiece, SpecSets

EVENT_TOL = 1e-9
ZENO_JUMPS = 100
ZENO_SPAN = 1e-6


class SimulationError(RuntimeError):
    pass


class EscapedDomain(SimulationError):
    pass


class ZenoSuspected(SimulationError):
    pass


@dataclass(frozen=True)
class SimOptions:
    t_max: float = 10.0
    j_max: int = 10_000
    dt: float = 1e-3
    flow_priority: bool = False
    stop: Callable[[np.ndarray, float], bool] | None = None  # early exit predicate on (state, t)


@dataclass
class HybridArc:
    t: list[float] = field(default_factory=list)
    j: list[int] = field(default_factory=list)
    x: list[np.ndarray] = field(default_factory=list)
    jumps: list[tuple[float, int, str, str]] = field(default_factory=list)  # (t, j, kind, name)
    stopped: str = ""

    def add(self, t: float, j: int, x: np.ndarray) -> None:
        self.t.append(float(t))
        self.j.append(int(j))
        self.x.append(np.array(x, dtype=float))

    @property
    def states(self) -> np.ndarray:
        return np.array(self.x)

    def final(self) -> np.ndarray:
        return self.x[-1]

    def well_formed(self, eta: Sequence[float] = (), timer_idx: Sequence[int] = (), tol: float = 1e-6) -> bool:
        """Hybrid-time-domain axioms plus timer bounds."""
        for k in range(1, len(self.t)):
            dt, dj = self.t[k] - self.t[k - 1], self.j[k] - self.j[k - 1]
            if dt < 0 or dj not in (0, 1) or (dj == 1 and abs(dt) > 0):
                return False
        for x in self.x:
            for i, e in zip(timer_idx, eta):
                if not -tol <= x[i] <= e + tol:
                    return False
        return True

    def to_csv(self, path, names: Sequence[str] | None = None) -> None:
        n = len(self.x[0]) if self.x else 0
        names = list(names) if names is not None else [f"s{i + 1}" for i in range(n)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "j"] + names)
            for t, j, x in zip(self.t, self.j, self.x):
                w.writerow([f"{t:.10g}", j] + [f"{v:.10g}" for v in x])


def _vec(exprs: Sequence[Expr]):
    fns = [lambdify(e) for e in exprs]

    def f(x):
        return np.array([float(g(x, ())) for g in fns])

    return f


class _Compiled:
    def __init__(self, cl: ClosedLoop, d: np.ndarray | Callable[[float], np.ndarray]):
        self.cl = cl
        self.n = cl.n
        self.d = d
        self.flow = _vec(cl.flow)
        self.pieces: list[tuple[JumpPiece, str, list, list]] = []
        for jp in cl.jumps:
            self.pieces.append((jp, "system", [lambdify(g) for g in jp.guard.constraints], _vec(jp.reset)))
        for jp in cl.timer_jumps:
            self.pieces.append((jp, "timer", [lambdify(g) for g in jp.guard.constraints], _vec(jp.reset)))
        self.fset = [[lambdify(g) for g in guard.constraints] for guard in cl.flow_set]
        self.fset_when = [guard.when for guard in cl.flow_set]
        p = cl.partition
        self.timers = list(p.ts)
        self.eta = list(p.eta)

    def full(self, x, t):
        d = self.d(t) if callable(self.d) else self.d
        return np.concatenate([x, np.asarray(d, dtype=float)])

    def rhs(self, x, t):
        return self.flow(self.full(x, t))

    def active(self, x, t) -> int:
        z = self.full(x, t)
        for k, (jp, kind, gs, _) in enumerate(self.pieces):
            ok = True
            for i, v in jp.guard.when:
                tol = EVENT_TOL * 10 if kind == "timer" else 1e-12
                if i in self.timers:
                    ok &= z[i] >= v - tol
                else:
                    ok &= abs(z[i] - v) <= tol
            if ok and all(float(g(z, ())) <= 0 for g in gs):
                return k
        return -1

    def in_flow_set(self, x, t) -> bool:
        for i, e in zip(self.timers, self.eta):
            if x[i] > e + EVENT_TOL * 10 or x[i] < -EVENT_TOL:
                return False
        if not self.fset:
            return True
        z = self.full(x, t)
        for gs, when in zip(self.fset, self.fset_when):
            if all(abs(z[i] - v) <= 1e-12 for i, v in when) and all(float(g(z, ())) <= 0 for g in gs):
                return True
        return False

    def rk4(self, x, t, h):
        k1 = self.rhs(x, t)
        k2 = self.rhs(x + 0.5 * h * k1, t + 0.5 * h)
        k3 = self.rhs(x + 0.5 * h * k2, t + 0.5 * h)
        k4 = self.rhs(x + h * k3, t + h)
        return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def simulate(cl: ClosedLoop, x0: Sequence[float], opts: SimOptions = SimOptions(),
             d: Sequence[float] | Callable[[float], np.ndarray] | None = None) -> HybridArc:
    """Integrate one maximal-up-to-horizon solution from ``x0``."""
    if d is None:
        d = 0.5 * (np.asarray(cl.system.dist_lo, dtype=float) + np.asarray(cl.system.dist_hi, dtype=float))
    m = _Compiled(cl, d if callable(d) else np.asarray(d, dtype=float))
    x = np.asarray(x0, dtype=float).copy()
    if len(x) != m.n:
        raise ValueError(f"initial state has {len(x)} entries, expected {m.n}")
    t, j = 0.0, 0
    arc = HybridArc()
    arc.add(t, j, x)
    if m.active(x, t) < 0 and not m.in_flow_set(x, t):
        raise EscapedDomain("initial state is outside C and D")
    recent: list[float] = []
    while True:
        if opts.stop is not None and opts.stop(x, t):
            arc.stopped = "stop"
            return arc
        k = m.active(x, t)
        if k >= 0 and (not opts.flow_priority or not _can_flow(m, x, t, opts.dt)):
            jp, kind, _, reset = m.pieces[k]
            x = reset(m.full(x, t))
            j += 1
            arc.jumps.append((t, j, kind, jp.name))
            arc.add(t, j, x)
            recent.append(t)
            if len(recent) >= ZENO_JUMPS:
                if recent[-1] - recent[-ZENO_JUMPS] < ZENO_SPAN:
                    raise ZenoSuspected(f"{ZENO_JUMPS} jumps within {ZENO_SPAN} time units at t={t:.6g}")
                recent = recent[-ZENO_JUMPS:]
            if j >= opts.j_max:
                arc.stopped = "j_max"
                return arc
            continue
        if t >= opts.t_max - 1e-15:
            arc.stopped = "t_max"
            return arc
        h = min(opts.dt, opts.t_max - t)
        for i, e in zip(m.timers, m.eta):
            if e - x[i] > 0:
                h = min(h, e - x[i])
        xn = m.rk4(x, t, h)
        for i, e in zip(m.timers, m.eta):
            if abs(xn[i] - e) < 1e-12:
                xn[i] = e
        k = m.active(xn, t + h)
        if k >= 0 and m.pieces[k][1] != "timer":  # timers already land exactly on eta
            lo, hi = 0.0, h
            while hi - lo > EVENT_TOL:
                mid = 0.5 * (lo + hi)
                if m.active(m.rk4(x, t, mid), t + mid) >= 0:
                    hi = mid
                else:
                    lo = mid
            if hi < h:
                xn, h = m.rk4(x, t, hi), hi
        elif not m.in_flow_set(xn, t + h):
            raise EscapedDomain(f"solution left C without reaching D at t={t + h:.6g}")
        x, t = xn, t + h
        arc.add(t, j, x)


def _can_flow(m: _Compiled, x, t, dt) -> bool:
    if not m.in_flow_set(x, t):
        return False
    return m.in_flow_set(m.rk4(x, t, min(dt, 1e-6)), t)


# ---------------------------------------------------------------------------
# validation


def _sample_initial(sets: SpecSets, cl: ClosedLoop, rng: np.random.Generator) -> np.ndarray:
    p = cl.partition
    coords = sets.initial(p)
    x = np.empty(p.n)
    for i, c in enumerate(coords):
        x[i] = rng.choice(c.values) if c.is_finite else rng.uniform(c.lo, c.hi)
    for jdx, i in sets.init_links:
        x[jdx] = x[i]
    return x


def _in(coords, x, tol=1e-9) -> bool:
    return all(c.contains(v, tol) for c, v in zip(coords, x))


@dataclass
class ValidationReport:
    runs: int
    reached: int
    violations: int
    unfinished: int
    certified: bool
    failures: list[dict] = field(default_factory=list)

    @property
    def success_fraction(self) -> float:
        return self.reached / self.runs if self.runs else 0.0

    @property
    def flagged(self) -> bool:
        """A violation on a certified system indicates a toolkit bug."""
        return self.certified and self.violations > 0

    def as_dict(self) -> dict:
        return {"runs": self.runs, "reached": self.reached, "violations": self.violations,
                "unfinished": self.unfinished, "success_fraction": self.success_fraction,
                "certified": self.certified, "flagged": self.flagged, "failures": self.failures[:10]}


def validate_certificate(cl: ClosedLoop, sets: SpecSets, n_runs: int = 100, *, V: Expr | None = None,
                         beta: float | None = None, certified: bool = True, seed: int = 0,
                         opts: SimOptions = SimOptions(t_max=20.0, dt=2e-3), stay_time: float = 2.0,
                         d_sampler: Callable[[np.random.Generator], np.ndarray] | None = None) -> ValidationReport:
    """Simulate from random initial points in ``I``.

    Reach-while-stay: the arc must reach ``O`` without leaving ``S``. With a
    ``beta`` (reach-and-stay), once ``V <= beta`` inside ``O`` the arc must stay
    in ``O`` for a further ``stay_time``.
    """
    rng = np.random.default_rng(seed)
    p = cl.partition
    safe, goal = sets.safe(p), sets.goal(p)
    vfun = lambdify(V) if V is not None else None
    reached = violations = unfinished = 0
    failures = []
    for r in range(n_runs):
        x0 = _sample_initial(sets, cl, rng)
        dist = d_sampler(rng) if d_sampler is not None else None
        state = {"in_b": False, "t_b": None}

        def in_b(x):
            return beta is not None and vfun is not None and _in(goal, x) and float(vfun(np.concatenate([x, np.zeros(cl.k)]), ())) <= beta

        def stop(x, t):
            if not _in(safe, x):
                return True
            if beta is None:
                return _in(goal, x)
            if state["in_b"]:
                return not _in(goal, x) or t >= state["t_b"] + stay_time
            if in_b(x):
                state["in_b"], state["t_b"] = True, t
            return False

        o = SimOptions(opts.t_max if beta is None else opts.t_max + stay_time, opts.j_max, opts.dt,
                       opts.flow_priority, stop)
        try:
            arc = simulate(cl, x0, o, dist)
        except (EscapedDomain, ZenoSuspected) as exc:
            violations += 1
            failures.append({"x0": x0.tolist(), "reason": type(exc).__name__})
            continue
        xf = arc.final()
        if not _in(safe, xf):
            violations += 1
            failures.append({"x0": x0.tolist(), "reason": "left S", "t": arc.t[-1]})
        elif beta is None:
            if _in(goal, xf):
                reached += 1
            else:
                unfinished += 1
        else:
            if state["in_b"] and not _in(goal, xf):
                violations += 1
                failures.append({"x0": x0.tolist(), "reason": "left O after entering B", "t": arc.t[-1]})
            elif state["in_b"]:
                reached += 1
            else:
                unfinished += 1
    return ValidationReport(n_runs, reached, violations, unfinished, certified, failures)


# ---------------------------------------------------------------------------
# plots


def _svg_path(pts, sx, sy) -> str:
    return " ".join(("M" if k == 0 else "L") + f"{sx(a):.2f},{sy(b):.2f}" for k, (a, b) in enumerate(pts))


def phase_svg(path, arcs: Sequence[HybridArc], sets: SpecSets, dims: tuple[int, int] = (0, 1),
              V: Expr | None = None, beta: float | None = None, nstate: int | None = None,
              fixed: Sequence[float] | None = None, size: int = 480) -> None:
    """Phase portrait with the boxes S, I, O and the zero / beta level sets of ``V``."""
    i, k = dims
    (xl, xh), (yl, yh) = _axis(sets, i)[0], _axis(sets, k)[0]
    pad = 20

    def sx(v):
        return pad + (v - xl) / (xh - xl) * (size - 2 * pad)

    def sy(v):
        return size - pad - (v - yl) / (yh - yl) * (size - 2 * pad)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">',
           '<rect width="100%" height="100%" fill="white"/>']
    for (lo_i, hi_i), (lo_k, hi_k), colour in zip(_axis(sets, i), _axis(sets, k), ("#333", "#2a7", "#c33")):
        out.append(f'<rect x="{sx(lo_i):.2f}" y="{sy(hi_k):.2f}" width="{sx(hi_i) - sx(lo_i):.2f}" '
                   f'height="{sy(lo_k) - sy(hi_k):.2f}" fill="none" stroke="{colour}"/>')
    if V is not None:
        n = nstate or len(sets.sx_lo)
        base = np.zeros(n) if fixed is None else np.asarray(fixed, dtype=float)
        gx, gy = np.meshgrid(np.linspace(xl, xh, 121), np.linspace(yl, yh, 121))
        X = np.repeat(base[:, None], gx.size, axis=1)
        X[i], X[k] = gx.ravel(), gy.ravel()
        vals = np.broadcast_to(lambdify(V)(X, ()), (gx.size,)).reshape(gx.shape)
        for level, colour in ((0.0, "#36c"), (beta, "#c6c")):
            if level is None:
                continue
            for seg in _contour(gx, gy, vals, level):
                out.append(f'<path d="{_svg_path(seg, sx, sy)}" fill="none" stroke="{colour}" stroke-dasharray="4 2"/>')
    for arc in arcs:
        X = arc.states
        out.append(f'<path d="{_svg_path(X[:, [i, k]], sx, sy)}" fill="none" stroke="#000" stroke-width="0.8"/>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out))


def _axis(sets: SpecSets, idx: int) -> list[tuple[float, float]]:
    """(S, I, O) ranges along state ``idx``; discrete and timer coordinates get their hull."""
    nx, nq = len(sets.sx_lo), len(sets.sq)
    if idx < nx:
        return [(sets.sx_lo[idx], sets.sx_hi[idx]), (sets.ix_lo[idx], sets.ix_hi[idx]),
                (sets.ox_lo[idx], sets.ox_hi[idx])]
    if idx < nx + nq:
        q = idx - nx
        iq = sets.iq[q] if sets.iq is not None else sets.sq[q]
        rng = [(c.lo, c.hi) for c in (sets.sq[q], iq, sets.oq[q])]
    else:
        rng = [(0.0, 1.0)] * 3
    lo, hi = rng[0]
    pad = 0.1 * (hi - lo) or 0.5
    return [(lo - pad, hi + pad)] + rng[1:]


def _contour(gx, gy, vals, level):
    """Marching-squares segments of one level set."""
    segs = []
    ny, nx = vals.shape
    for a in range(ny - 1):
        for b in range(nx - 1):
            c = [(gx[a, b], gy[a, b], vals[a, b]), (gx[a, b + 1], gy[a, b + 1], vals[a, b + 1]),
                 (gx[a + 1, b + 1], gy[a + 1, b + 1], vals[a + 1, b + 1]), (gx[a + 1, b], gy[a + 1, b], vals[a + 1, b])]
            pts = []
            for p, q in zip(c, c[1:] + c[:1]):
                if (p[2] - level) * (q[2] - level) < 0:
                    w = (level - p[2]) / (q[2] - p[2])
                    pts.append((p[0] + w * (q[0] - p[0]), p[1] + w * (q[1] - p[1])))
            if len(pts) >= 2:
                segs.append(pts[:2])
    return segs
