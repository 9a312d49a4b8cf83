"""Sample-based fitness of a candidate against a condition set.

Per group ``i`` the sample fitness is ``1 / (1 + ||e||_2)`` where the error of
a sample point is ``max(rho + eps, 0)`` and ``rho = max_i min_j f_ij``. Points
violating a side constraint contribute zero error; points where an expression
is undefined contribute infinite error. The overall fitness averages
``w_i * (F_samp,i + F_SMT,i)`` with weights that hold back later groups until
earlier ones are satisfied.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import qmc

from .conditions import ConditionSet, StandardFormula, apply_links, specialize
from .expr import Expr, lambdify, maximum, minimum, param_indices


@dataclass(frozen=True)
class FitnessConfig:
    n_samples: int = 100  # base samples per group
    max_counterexamples: int = 300  # FIFO bound per group
    epsilon: float = 2e-3  # safety margin (2 * delta)
    oversample: int = 4


def _rho_of(clauses) -> Expr:
    rows = []
    for row in clauses:
        r = row[0]
        for e in row[1:]:
            r = minimum(r, e)
        rows.append(r)
    out = rows[0]
    for r in rows[1:]:
        out = maximum(out, r)
    return out


def rho_generic(f: StandardFormula) -> Expr:
    """``max_i min_j f_ij`` over the unspecialised clause matrix."""
    return _rho_of(f.clauses)


class _Kernel:
    """Compiled ``rho`` and constraint functions of one branch.

    Evaluates the branch with its cell substituted and constants folded, as
    the prover does; this matters for finite-set memberships, which are
    identically zero on members and would otherwise fail the
    epsilon-strengthening everywhere.
    """

    def __init__(self, f: StandardFormula):
        sp = specialize(f, exact=True)
        self.empty = sp.trivial or not sp.clauses
        self.rho = None if self.empty else lambdify(_rho_of(sp.clauses))
        g = None
        for c in sp.constraints:
            g = c if g is None else maximum(g, c)
        self.cons = None if g is None else lambdify(g)
        self.cons_has_params = g is not None and bool(param_indices(g))
        self.key = (sp.constraints, sp.clauses, self.empty)

    def errors(self, X: np.ndarray, P: np.ndarray, eps: float) -> np.ndarray:
        """Errors for ``X (nvars, N)`` under parameter batch ``P (lam, np)`` -> ``(lam, N)``."""
        lam, N = P.shape[0], X.shape[1]
        if self.empty or N == 0:
            return np.zeros((lam, N))
        p = P.T[:, :, None] if P.shape[1] else np.zeros((0, lam, 1))
        with np.errstate(all="ignore"):
            r = np.broadcast_to(np.asarray(self.rho(X, p), dtype=float), (lam, N))
            e = np.maximum(r + eps, 0.0)
            e = np.where(np.isnan(r), np.inf, e)
            if self.cons is not None:
                g = np.broadcast_to(np.asarray(self.cons(X, p), dtype=float), (lam, N))
                e = np.where(g > 0, 0.0, e)
        return e

def rho(f: StandardFormula, X: np.ndarray, params: Sequence[float] = ()) -> np.ndarray:
    """``rho`` at points ``X (nvars, N)``; ``+inf`` where an expression is undefined."""
    fn = lambdify(rho_generic(f))
    with np.errstate(all="ignore"):
        r = np.broadcast_to(np.asarray(fn(X, np.asarray(params, dtype=float)), dtype=float), (X.shape[1],))
    return np.where(np.isnan(r), np.inf, r)


def err(f: StandardFormula, X: np.ndarray, params: Sequence[float] = (), eps: float = 2e-3) -> np.ndarray:
    k = _Kernel(f)
    return k.errors(X, np.asarray(params, dtype=float)[None, :], eps)[0]


def f_samp(errors: np.ndarray) -> np.ndarray:
    """``1 / (1 + ||e||)`` along the last axis."""
    with np.errstate(all="ignore"):
        n = np.sqrt(np.sum(np.square(errors), axis=-1))
    return 1.0 / (1.0 + n)


def weights(fs: Sequence[float]) -> np.ndarray:
    """Cascade ``w_1 = 1``, ``w_i = floor(w_{i-1} * F_samp,i-1)``: a group counts only once all earlier ones are perfect."""
    fs = np.asarray(fs, dtype=float)
    w = np.ones_like(fs)
    for i in range(1, fs.shape[-1]):
        w[..., i] = np.floor(w[..., i - 1] * fs[..., i - 1])
    return w


def overall(fs: Sequence[float], fsmt: Sequence[float] | None = None) -> np.ndarray:
    fs = np.asarray(fs, dtype=float)
    fsmt = np.zeros_like(fs) if fsmt is None else np.asarray(fsmt, dtype=float)
    n = fs.shape[-1]
    return np.sum(weights(fs) * (fs + fsmt), axis=-1) / (2.0 * n)


def cma_objective(fs: np.ndarray) -> np.ndarray:
    """``sum_i w_i F_samp,i`` (to be maximised by CMA-ES)."""
    return np.sum(weights(fs) * fs, axis=-1)


def lhs_points(f: StandardFormula, k: int, rng: np.random.Generator) -> np.ndarray:
    """Latin hypercube over the non-degenerate coordinates of a branch."""
    lo, hi = f.lo, f.hi
    linked = {j for j, _ in f.cell.links}
    free = [i for i in range(len(lo)) if hi[i] > lo[i] and i not in linked]
    X = np.empty((len(lo), k))
    X[:] = lo[:, None]
    if free and k:
        u = qmc.LatinHypercube(d=len(free), seed=rng).random(k)
        for c, i in enumerate(free):
            X[i] = lo[i] + u[:, c] * (hi[i] - lo[i])
    return apply_links(f, X)


def _allocate(vols: np.ndarray, total: int) -> np.ndarray:
    """Volume-proportional integer split, at least one point per branch."""
    n = len(vols)
    if n == 0:
        return np.zeros(0, dtype=int)
    total = max(total, n)
    v = np.maximum(vols, 0.0)
    share = v / v.sum() * (total - n) if v.sum() > 0 else np.full(n, (total - n) / n)
    base = np.floor(share).astype(int)
    rest = total - n - base.sum()
    order = np.argsort(-(share - base))
    base[order[:rest]] += 1
    return base + 1


class SamplePool:
    """Base samples and counterexamples, shared by all candidates of a problem.

    The branch layout of every group depends only on the system and the sets,
    so points are stored per ``(group, branch)`` and reused for any ``V``.
    """

    def __init__(self, cs: ConditionSet, cfg: FitnessConfig = FitnessConfig(), seed: int | None = None):
        self.cfg = cfg
        self.layout = [len(g) for g in cs.groups]
        self.cex: list[deque] = [deque(maxlen=cfg.max_counterexamples) for _ in cs.groups]
        self._kernels: dict = {}
        rng = np.random.default_rng(seed)
        self.points: list[list[np.ndarray]] = [self._sample_group(g, rng) for g in cs.groups]

    def kernel(self, f: StandardFormula) -> _Kernel:
        k = getattr(f, "_kernel", None)
        if k is None:
            k = _Kernel(f)
            hit = self._kernels.get(k.key)
            if hit is None:
                if len(self._kernels) > 4096:
                    self._kernels.clear()
                self._kernels[k.key] = k
            else:
                k = hit
            f._kernel = k
        return k

    def _sample_group(self, group: list[StandardFormula], rng) -> list[np.ndarray]:
        if not group:
            return []
        vols = np.array([f.cell.volume() * float(np.prod([b - a for a, b in zip(f.dist_lo, f.dist_hi) if b > a] or [1.0]))
                         for f in group])
        quota = _allocate(vols, self.cfg.n_samples)
        out = []
        for f, q in zip(group, quota):
            k = self.kernel(f)
            if k.cons is not None and not k.cons_has_params:
                X = lhs_points(f, q * self.cfg.oversample, rng)
                with np.errstate(all="ignore"):
                    g = np.broadcast_to(np.asarray(k.cons(X, np.zeros(0)), dtype=float), (X.shape[1],))
                keep = X[:, g <= 0][:, :q]
                X = keep if keep.shape[1] else X[:, :0]
            else:
                X = lhs_points(f, q, rng)
            out.append(X)
        return out

    def add_counterexamples(self, group: int, branch: int, X: np.ndarray) -> None:
        """Append points found for ``branch`` of ``group`` (0-based); oldest are evicted."""
        for j in range(X.shape[1]):
            self.cex[group].append((branch, X[:, j].copy()))

    def n_counterexamples(self, group: int) -> int:
        return len(self.cex[group])

    def bind(self, cs: ConditionSet) -> "Evaluator":
        if [len(g) for g in cs.groups] != self.layout:
            raise ValueError("condition set does not match the sample layout")
        return Evaluator(self, cs)


class Evaluator:
    """Sample fitness of one candidate structure for batches of parameter vectors."""

    def __init__(self, pool: SamplePool, cs: ConditionSet):
        self.eps = pool.cfg.epsilon
        self.groups: list[list[tuple[_Kernel, np.ndarray]]] = []
        for gi, group in enumerate(cs.groups):
            extra: dict[int, list] = {}
            for b, x in pool.cex[gi]:
                extra.setdefault(b, []).append(x)
            by_key: dict = {}
            for bi, f in enumerate(group):
                X = pool.points[gi][bi]
                if bi in extra:
                    X = np.concatenate([X, np.stack(extra[bi], axis=1)], axis=1)
                if X.shape[1] == 0:
                    continue
                k = pool.kernel(f)
                if k.empty:
                    continue
                if k.key in by_key:
                    by_key[k.key] = (k, np.concatenate([by_key[k.key][1], X], axis=1))
                else:
                    by_key[k.key] = (k, X)
            self.groups.append(list(by_key.values()))

    def evaluate(self, P) -> np.ndarray:
        """``(lam, G)`` sample fitness for parameter batch ``P (lam, n_params)``."""
        P = np.atleast_2d(np.asarray(P, dtype=float))
        lam = P.shape[0]
        out = np.ones((lam, len(self.groups)))
        for gi, parts in enumerate(self.groups):
            if not parts:
                continue
            sq = np.zeros(lam)
            with np.errstate(all="ignore"):
                for k, X in parts:
                    sq = sq + np.sum(np.square(k.errors(X, P, self.eps)), axis=1)
            out[:, gi] = 1.0 / (1.0 + np.sqrt(sq))
        return out

    def errors(self, params: Sequence[float]) -> list[np.ndarray]:
        """Per-group error vectors for one parameter vector."""
        P = np.asarray(params, dtype=float)[None, :]
        return [np.concatenate([k.errors(X, P, self.eps)[0] for k, X in parts]) if parts else np.zeros(0)
                for parts in self.groups]


@dataclass
class FitnessReport:
    f_samp: np.ndarray
    f_smt: np.ndarray
    total: float
    n_params: int = 0
    param_norm: float = 0.0

    @property
    def weights(self) -> np.ndarray:
        return weights(self.f_samp)

    def rank_key(self) -> tuple:
        """Primary fitness, then fewer parameters, then smaller norm (larger key is better)."""
        return (self.total, -self.n_params, -self.param_norm)


def secondary(values: Sequence[float]) -> tuple[int, float]:
    """``(parameter count, Euclidean norm)``; smaller is better."""
    v = np.asarray(values, dtype=float)
    return len(v), float(np.linalg.norm(v)) if len(v) else 0.0


class GenerationLog:
    """Per-generation CSV of fitness statistics."""

    def __init__(self, path, n_groups: int):
        self.path = path
        self.n_groups = n_groups
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["generation", "best", "mean", "best_params"]
                       + [f"f_samp_{i + 1}" for i in range(n_groups)]
                       + [f"f_smt_{i + 1}" for i in range(n_groups)] + ["seconds"])

    def write(self, gen: int, reports: Sequence[FitnessReport], seconds: float) -> None:
        best = max(reports, key=lambda r: r.rank_key())
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow([gen, f"{best.total:.6g}", f"{np.mean([r.total for r in reports]):.6g}",
                                     best.n_params] + [f"{v:.6g}" for v in best.f_samp]
                                    + [f"{v:.6g}" for v in best.f_smt] + [f"{seconds:.3f}"])
