"""Interval branch-and-prune delta-decision procedure.

To prove ``forall x in X: AND_i OR_j f_ij(x) <= 0`` we search for a point of
the negation ``exists x in X: OR_i AND_j f_ij(x) > 0``. Boxes are discarded
once every row has a disjunct whose enclosure lies below zero, and reported
as witnesses when a row is delta-robustly positive on a box narrower than
``delta`` (or when the box center is an actual violation).
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .conditions import ConditionSet, Specialized, StandardFormula
from .expr import Expr, ExprError, contract, diff, eval_many, free_vars, is_smooth, lambdify, maximum, minimum, simplify
from .expr.interval import i_add, i_mul, ieval_nodes


class Status(str, Enum):
    PROVED = "proved"
    REFUTED = "refuted-delta"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class ProverConfig:
    delta: float = 1e-3
    timeout: float = 20.0
    max_splits: int = 5_000_000
    split: str = "smear"  # or "scaled-widest"
    batch: int = 512
    max_witnesses: int = 5
    contract: bool = True
    floor: float = 1e-3  # boxes below delta*floor are not split further
    probe: int = 1024  # random points tried before branch and prune
    centered: bool = True  # mean-value form on undecided boxes

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.split not in ("smear", "scaled-widest"):
            raise ValueError(f"unknown split heuristic '{self.split}'")


@dataclass
class Verdict:
    status: Status
    witnesses: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    splits: int = 0
    boxes: int = 0
    seconds: float = 0.0
    group: int = 0
    label: str = ""
    spec: Specialized | None = None

    @property
    def proved(self) -> bool:
        return self.status is Status.PROVED

    def stats(self) -> dict:
        return {"group": self.group, "branch": self.label, "status": self.status.value,
                "splits": self.splits, "boxes": self.boxes, "seconds": round(self.seconds, 4)}


# ---------------------------------------------------------------------------
# point evaluation of a specialized formula


def rho_expr(sp: Specialized) -> Expr:
    """``max_i min_j f_ij`` as one expression."""
    rows = []
    for row in sp.clauses:
        r = row[0]
        for f in row[1:]:
            r = minimum(r, f)
        rows.append(r)
    out = rows[0]
    for r in rows[1:]:
        out = maximum(out, r)
    return out


def _points_rho(sp: Specialized, X: np.ndarray) -> np.ndarray:
    if sp.trivial:
        return np.full(X.shape[1], -np.inf)
    r = eval_many(rho_expr(sp), X)
    return np.where(np.isnan(r), np.inf, r)


def _points_feasible(sp: Specialized, X: np.ndarray, tol: float = 0.0) -> np.ndarray:
    ok = np.ones(X.shape[1], dtype=bool)
    for g in sp.constraints:
        v = eval_many(g, X)
        ok &= v <= tol
    return ok


# ---------------------------------------------------------------------------
# the search


def check(phi: StandardFormula | Specialized, cfg: ProverConfig = ProverConfig(),
          params: Sequence[float] = ()) -> Verdict:
    t0 = time.perf_counter()
    sp = phi.specialize(params) if isinstance(phi, StandardFormula) else phi
    group = getattr(phi, "group", 0)
    label = f"{phi.cell.tag} {phi.piece}".strip() if isinstance(phi, StandardFormula) else ""
    v = _search(sp, cfg)
    v.seconds = time.perf_counter() - t0
    v.group, v.label, v.spec = group, label, sp
    return v


def _search(sp: Specialized, cfg: ProverConfig) -> Verdict:
    if sp.trivial:
        return Verdict(Status.PROVED)
    deadline = time.perf_counter() + cfg.timeout
    nv = len(sp.lo)
    scale = sp.hi - sp.lo
    inv_scale = np.where(scale > 0, 1.0 / np.where(scale > 0, scale, 1.0), 0.0)
    rows = sp.clauses
    cons = sp.constraints
    flat = [f for row in rows for f in row]
    row_of = np.concatenate([[i] * len(row) for i, row in enumerate(rows)]).astype(int)
    n_rows = len(rows)
    rho = lambdify(rho_expr(sp))
    cons_f = [lambdify(g) for g in cons]
    floor = cfg.delta * cfg.floor
    grads = {e: _gradient(e, scale) for e in list(cons) + flat} if cfg.centered or cfg.split == "smear" else {}

    if cfg.probe:  # cheap search for real violations before branching
        P = sp.lo[:, None] + np.random.default_rng(0).random((nv, cfg.probe)) * scale[:, None]
        with np.errstate(all="ignore"):
            bad = np.broadcast_to(rho(P, ()) > 0, (cfg.probe,)).copy()
            for cf in cons_f:
                bad &= np.broadcast_to(cf(P, ()) <= 0, bad.shape)
        if bad.any():
            pts = P[:, bad][:, : cfg.max_witnesses]
            return Verdict(Status.REFUTED, [(x.copy(), x.copy()) for x in pts.T], 0, 0)

    cap = 4096
    st_lo = np.empty((cap, nv))
    st_hi = np.empty((cap, nv))
    st_lo[0], st_hi[0] = sp.lo, sp.hi
    size = 1
    splits = boxes = unresolved = 0
    witnesses: list[tuple[np.ndarray, np.ndarray]] = []

    row_contractors = []
    if cfg.contract:
        base = [(g, -np.inf, 0.0) for g in cons]
        for row in rows:
            row_contractors.append(base + [(f, 0.0, np.inf) for f in row])

    while size:
        if time.perf_counter() > deadline or splits > cfg.max_splits:
            return Verdict(Status.TIMEOUT, witnesses, splits, boxes)
        b = min(cfg.batch, size)
        L = st_lo[size - b:size].T.copy()
        H = st_hi[size - b:size].T.copy()
        size -= b
        boxes += b

        if row_contractors:
            L, H = _contract_rows(row_contractors, L, H)
            if L.shape[1] == 0:
                continue

        memo: dict = {}
        nb = L.shape[1]
        enc = {e: ieval_nodes(e, L, H, memo=memo)[e] for e in list(cons) + flat}
        smear = None
        if grads:
            enc, smear = _centered(enc, grads, L, H, cons, flat, row_of, n_rows, cfg.centered)
        alive = np.ones(nb, dtype=bool)
        for g in cons:
            gl, gh, fl = enc[g]
            alive &= ~((gl > 0) & ~fl)
        # rows_done[i, k]: row i certainly satisfied on box k
        rows_done = np.zeros((n_rows, nb), dtype=bool)
        row_pos = np.ones((n_rows, nb), dtype=bool)  # all f > -delta (delta-rule)
        for f, r in zip(flat, row_of):
            fl_, fh_, flag = enc[f]
            rows_done[r] |= (fh_ <= 0) & ~flag
            row_pos[r] &= (fl_ > -cfg.delta) & ~flag
        alive &= ~np.all(rows_done, axis=0)
        if not alive.any():
            continue
        L, H, row_pos = L[:, alive], H[:, alive], row_pos[:, alive]
        if smear is not None:
            smear = smear[:, alive]

        width = H - L
        wmax = width.max(axis=0) if nv else np.zeros(L.shape[1])
        C = 0.5 * (L + H)
        with np.errstate(all="ignore"):
            rc = np.broadcast_to(rho(C, ()), (L.shape[1],))
            rc = np.where(np.isnan(rc), np.inf, rc)
            real = rc > 0
            close = rc > -cfg.delta
            for cf in cons_f:
                gv = np.broadcast_to(cf(C, ()), real.shape)
                real &= gv <= 0
                close &= gv <= cfg.delta
        # delta-sat: a narrow box whose center is delta-close to a violation
        is_w = real | ((wmax < cfg.delta) & row_pos.any(axis=0) & close)
        stuck = (wmax < floor) & ~is_w
        unresolved += int(stuck.sum())
        for k in np.flatnonzero(is_w):
            witnesses.append((L[:, k].copy(), H[:, k].copy()))
            if len(witnesses) >= cfg.max_witnesses:
                return Verdict(Status.REFUTED, witnesses, splits, boxes)
        keep = ~(is_w | stuck)
        L, H, width = L[:, keep], H[:, keep], width[:, keep]
        m = L.shape[1]
        if m == 0:
            continue
        dim = np.argmax(width * inv_scale[:, None], axis=0)
        if smear is not None and cfg.split == "smear":
            sm = smear[:, keep]
            good = np.all(np.isfinite(sm), axis=0) & (sm.max(axis=0) > 0)
            dim = np.where(good, np.argmax(np.where(np.isfinite(sm), sm, 0.0), axis=0), dim)
        cols = np.arange(m)
        mid = 0.5 * (L[dim, cols] + H[dim, cols])
        H1 = H.copy()
        H1[dim, cols] = mid
        L2 = L.copy()
        L2[dim, cols] = mid
        splits += m
        need = size + 2 * m
        if need > cap:
            while cap < need:
                cap *= 2
            st_lo = _grow(st_lo, cap)
            st_hi = _grow(st_hi, cap)
        st_lo[size:size + m] = L2.T
        st_hi[size:size + m] = H.T
        st_lo[size + m:size + 2 * m] = L.T
        st_hi[size + m:size + 2 * m] = H1.T
        size += 2 * m

    if witnesses:
        return Verdict(Status.REFUTED, witnesses, splits, boxes)
    if unresolved:  # enclosures too loose at the resolution floor: undecided
        return Verdict(Status.TIMEOUT, [], splits, boxes)
    return Verdict(Status.PROVED, [], splits, boxes)


def _gradient(e: Expr, scale: np.ndarray):
    """Symbolic partials over the non-degenerate coordinates, or None if nonsmooth."""
    if not is_smooth(e):
        return None
    try:
        return [(i, simplify(diff(e, i))) for i in sorted(free_vars(e)) if scale[i] > 0]
    except ExprError:
        return None


def _centered(enc, grads, L, H, cons, flat, row_of, n_rows, meet=True):
    """Meet natural enclosures with the mean-value form on undecided boxes.

    ``f(X) ⊆ f(c) + sum_i df/dx_i(X) (X_i - c_i)`` with ``c`` the box center.
    Cancelling terms blow up natural enclosures; the centered form shrinks
    quadratically with the box width. Also returns the smear
    ``max_f |df/dx_i(X)| w_i`` per box (NaN where not computed).
    """
    nb = L.shape[1]
    smear = np.full(L.shape, np.nan)
    pending = np.ones(nb, dtype=bool)
    for g in cons:
        gl, _, fl = enc[g]
        pending &= ~((gl > 0) & ~fl)
    done = np.zeros((n_rows, nb), dtype=bool)
    for f, r in zip(flat, row_of):
        _, fh, fl = enc[f]
        done[r] |= (fh <= 0) & ~fl
    pending &= ~np.all(done, axis=0)
    idx = np.flatnonzero(pending)
    if idx.size == 0:
        return enc, smear
    Ls, Hs = L[:, idx], H[:, idx]
    C = 0.5 * (Ls + Hs)
    dl, dh = Ls - C, Hs - C
    sm = np.zeros(Ls.shape)
    memo_c: dict = {}
    memo_g: dict = {}
    out = dict(enc)
    for e, gr in grads.items():
        if gr is None:
            continue
        cl, ch, cf = ieval_nodes(e, C, C, memo=memo_c)[e]
        lo, hi, flag = cl, ch, cf
        for i, de in gr:
            gl, gh, gf = ieval_nodes(de, Ls, Hs, memo=memo_g)[de]
            with np.errstate(invalid="ignore"):
                mag = np.where(gf, np.inf, np.maximum(np.abs(gl), np.abs(gh)))
                sm[i] = np.fmax(sm[i], mag * (dh[i] - dl[i]))
            if meet:
                pl, ph = i_mul(gl, gh, dl[i], dh[i])
                lo, hi = i_add(lo, hi, pl, ph)
                flag = flag | gf
        if not meet:
            continue
        nl, nh, nf = enc[e]
        nl, nh, nf = nl.copy(), nh.copy(), nf.copy()
        ok = ~flag & ~np.isnan(lo) & ~np.isnan(hi)
        sel = idx[ok]
        nl[sel] = np.maximum(nl[sel], lo[ok])
        nh[sel] = np.minimum(nh[sel], hi[ok])
        nf[sel] = nf[sel] & False
        out[e] = (nl, nh, nf)
    smear[:, idx] = sm
    return out, smear


def _grow(a: np.ndarray, cap: int) -> np.ndarray:
    out = np.empty((cap, a.shape[1]))
    out[:a.shape[0]] = a
    return out


def _contract_rows(contractors, L, H):
    """Hull of the per-row contractions; drops boxes empty for every row."""
    if len(contractors) == 1:
        l2, h2, empty = contract(contractors[0], L, H)
        return l2[:, ~empty], h2[:, ~empty]
    acc_l = np.full_like(L, np.inf)
    acc_h = np.full_like(H, -np.inf)
    any_ok = np.zeros(L.shape[1], dtype=bool)
    for cons in contractors:
        l2, h2, empty = contract(cons, L, H)
        ok = ~empty
        acc_l[:, ok] = np.minimum(acc_l[:, ok], l2[:, ok])
        acc_h[:, ok] = np.maximum(acc_h[:, ok], h2[:, ok])
        any_ok |= ok
    return acc_l[:, any_ok], acc_h[:, any_ok]


# ---------------------------------------------------------------------------
# counterexamples


def counterexamples(v: Verdict, k: int, rng: np.random.Generator, delta: float | None = None) -> np.ndarray:
    """Up to ``k`` points from the witness boxes with ``rho > -delta``.

    Each box contributes its center first, then uniform interior points.
    Returns an array of shape ``(nvars, count)``.
    """
    if v.status is not Status.REFUTED or not v.witnesses or k <= 0:
        nv = len(v.spec.lo) if v.spec is not None else 0
        return np.zeros((nv, 0))
    delta = 1e-3 if delta is None else delta
    sp = v.spec
    centers = np.stack([0.5 * (lo + hi) for lo, hi in v.witnesses], axis=1)
    pts = [centers]
    extra = max(0, k - centers.shape[1])
    if extra:
        per = -(-extra // len(v.witnesses)) * 4
        for lo, hi in v.witnesses:
            u = rng.random((len(lo), per))
            pts.append(lo[:, None] + u * (hi - lo)[:, None])
    X = np.concatenate(pts, axis=1)
    keep = (_points_rho(sp, X) > -delta) & _points_feasible(sp, X, delta)
    X = X[:, keep]
    return X[:, :k]


# ---------------------------------------------------------------------------
# whole condition sets


@dataclass
class GroupResult:
    group: int
    verdicts: list[Verdict]

    @property
    def status(self) -> Status:
        if all(v.proved for v in self.verdicts):
            return Status.PROVED
        if any(v.status is Status.REFUTED for v in self.verdicts):
            return Status.REFUTED
        return Status.TIMEOUT

    @property
    def seconds(self) -> float:
        return sum(v.seconds for v in self.verdicts)


@dataclass
class Certificate:
    V: Expr
    kappa: tuple[Expr, ...]
    gamma_c: float
    gamma_d: float
    beta: float | None
    spec: str
    groups: list[GroupResult]
    prover: ProverConfig
    extra: dict[str, GroupResult] = field(default_factory=dict)

    def verdict_table(self) -> list[dict]:
        rows = [{"group": g.group, "status": g.status.value, "branches": len(g.verdicts),
                 "seconds": round(g.seconds, 4)} for g in self.groups]
        rows += [{"group": name, "status": g.status.value, "branches": len(g.verdicts),
                  "seconds": round(g.seconds, 4)} for name, g in self.extra.items()]
        return rows


def _check_job(args):
    f, cfg, params = args
    v = check(f, cfg, params)
    v.spec = None  # keep the result small across processes
    return v


def verify_all(cs: ConditionSet, cfg: ProverConfig = ProverConfig(), params: Sequence[float] = (),
               early_exit: bool = False, workers: int = 1, group_exit: bool = False) -> list[GroupResult]:
    """Check every branch of every group, in fitness order.

    ``early_exit`` skips everything after the first branch that is not proved;
    ``group_exit`` only skips the rest of a group once one of its branches is refuted.
    """
    params = np.asarray(params, dtype=float)
    results: list[GroupResult] = []
    if workers > 1 and not (early_exit or group_exit):
        jobs = [(f, cfg, params) for f in cs.formulas()]
        with ProcessPoolExecutor(workers) as ex:
            flat = list(ex.map(_check_job, jobs))
        it = iter(flat)
        for gi, g in enumerate(cs.groups):
            vs = [next(it) for _ in g]
            results.append(GroupResult(gi + 1, vs))
        return results
    stop = False
    for gi, g in enumerate(cs.groups):
        vs = []
        refuted = False
        for f in g:
            if stop or refuted:
                vs.append(Verdict(Status.TIMEOUT, group=gi + 1, label="skipped"))
                continue
            v = check(f, cfg, params)
            vs.append(v)
            if early_exit and not v.proved:
                stop = True
            refuted = group_exit and v.status is Status.REFUTED
        results.append(GroupResult(gi + 1, vs))
    return results


def verify_extra(cs: ConditionSet, cfg: ProverConfig = ProverConfig(), params: Sequence[float] = ()) -> dict[str, GroupResult]:
    """Side requirements (Zeno exclusion, restricted jumps)."""
    params = np.asarray(params, dtype=float)
    return {name: GroupResult(0, [check(f, cfg, params) for f in fs]) for name, fs in cs.extra.items()}


def certificate_from(cs: ConditionSet, results: list[GroupResult], kappa: Sequence[Expr],
                     cfg: ProverConfig, params: Sequence[float] = (),
                     extra: dict[str, GroupResult] | None = None) -> Certificate | None:
    """A certificate exists iff every group and every side requirement is proved."""
    if not all(r.status is Status.PROVED for r in results):
        return None
    if cs.extra and (extra is None or set(extra) != set(cs.extra)
                     or not all(r.status is Status.PROVED for r in extra.values())):
        return None
    from .expr import bind_params

    params = np.asarray(params, dtype=float)
    V = bind_params(cs.V, params) if len(params) else cs.V
    kap = tuple(bind_params(k, params) if len(params) else k for k in kappa)
    beta = None
    if cs.beta is not None:
        b = bind_params(cs.beta, params) if len(params) else cs.beta
        beta = float(b.data[0]) if b.op == "const" else None
    return Certificate(V, kap, cs.gamma_c, cs.gamma_d, beta, cs.spec, results, cfg, dict(extra or {}))
