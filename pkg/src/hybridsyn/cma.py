"""Separable CMA-ES (diagonal covariance), maximising a batch objective."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass
class CmaState:
    mean: np.ndarray
    sigma: float
    diag: np.ndarray = field(default=None)  # diagonal covariance
    p_sigma: np.ndarray = field(default=None)
    p_c: np.ndarray = field(default=None)
    iteration: int = 0

    def __post_init__(self):
        n = len(self.mean)
        self.mean = np.asarray(self.mean, dtype=float).copy()
        if self.diag is None:
            self.diag = np.ones(n)
        if self.p_sigma is None:
            self.p_sigma = np.zeros(n)
        if self.p_c is None:
            self.p_c = np.zeros(n)
        if self.sigma <= 0:
            raise ValueError("step size must be positive")


class SepCMA:
    """Ros and Hansen's sep-CMA-ES with the standard default strategy parameters."""

    def __init__(self, x0, sigma0: float, rng: np.random.Generator, popsize: int | None = None):
        n = len(x0)
        self.n = n
        self.rng = rng
        self.state = CmaState(np.asarray(x0, dtype=float), float(sigma0))
        self.lam = popsize or 4 + int(3 * math.log(max(n, 1)))
        self.mu = self.lam // 2
        w = math.log(self.mu + 0.5) - np.log(np.arange(1, self.mu + 1))
        self.w = w / w.sum()
        self.mueff = 1.0 / np.sum(self.w ** 2)
        me = self.mueff
        self.cs = (me + 2) / (n + me + 5)
        self.ds = 1 + 2 * max(0.0, math.sqrt((me - 1) / (n + 1)) - 1) + self.cs
        self.cc = (4 + me / n) / (n + 4 + 2 * me / n)
        c1 = 2 / ((n + 1.3) ** 2 + me)
        cmu = min(1 - c1, 2 * (me - 2 + 1 / me) / ((n + 2) ** 2 + me))
        scale = (n + 2) / 3  # separable learning-rate boost
        self.c1 = min(1.0, c1 * scale)
        self.cmu = min(1 - self.c1, cmu * scale)
        self.chi = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))
        self._z: np.ndarray | None = None

    def ask(self) -> np.ndarray:
        s = self.state
        self._z = self.rng.standard_normal((self.lam, self.n))
        return s.mean + s.sigma * self._z * np.sqrt(s.diag)

    def tell(self, X: np.ndarray, f: np.ndarray) -> None:
        """Update from candidates ``X`` and their objective values (higher is better)."""
        s = self.state
        f = np.where(np.isnan(f), -np.inf, f)
        order = np.argsort(-f, kind="stable")[: self.mu]
        y = (X[order] - s.mean) / s.sigma
        yw = self.w @ y
        s.mean = s.mean + s.sigma * yw
        dinv = 1.0 / np.sqrt(s.diag)
        s.p_sigma = (1 - self.cs) * s.p_sigma + math.sqrt(self.cs * (2 - self.cs) * self.mueff) * yw * dinv
        s.iteration += 1
        hs = np.linalg.norm(s.p_sigma) / math.sqrt(1 - (1 - self.cs) ** (2 * s.iteration)) < (1.4 + 2 / (self.n + 1)) * self.chi
        s.p_c = (1 - self.cc) * s.p_c + hs * math.sqrt(self.cc * (2 - self.cc) * self.mueff) * yw
        rank_mu = self.w @ (y ** 2)
        s.diag = ((1 - self.c1 - self.cmu) * s.diag + self.c1 * (s.p_c ** 2 + (1 - hs) * self.cc * (2 - self.cc) * s.diag)
                  + self.cmu * rank_mu)
        s.diag = np.maximum(s.diag, 1e-300)
        s.sigma *= math.exp(min(1.0, (self.cs / self.ds) * (np.linalg.norm(s.p_sigma) / self.chi - 1)))
        s.sigma = max(s.sigma, 1e-300)


def maximize(fn: Callable[[np.ndarray], np.ndarray], x0, sigma0: float, generations: int,
             rng: np.random.Generator, target: float | None = None) -> tuple[np.ndarray, float]:
    """Run ``generations`` iterations; ``fn`` maps ``(lam, n)`` to ``(lam,)``. Returns the best seen."""
    x0 = np.asarray(x0, dtype=float)
    best_x = x0.copy()
    best_f = float(fn(x0[None, :])[0])
    if len(x0) == 0 or (target is not None and best_f >= target):
        return best_x, best_f
    es = SepCMA(x0, sigma0, rng)
    for _ in range(generations):
        X = es.ask()
        f = np.asarray(fn(X), dtype=float)
        i = int(np.nanargmax(np.where(np.isnan(f), -np.inf, f))) if np.any(~np.isnan(f)) else -1
        if i >= 0 and f[i] > best_f:
            best_f, best_x = float(f[i]), X[i].copy()
        es.tell(X, f)
        if target is not None and best_f >= target:
            break
    return best_x, best_f
