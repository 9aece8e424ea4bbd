"""Pareto dominance, NSGA-II non-dominated sorting and survival, and the
final-model pick. All objectives are minimized."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class Dominance(Enum):
    LEFT = "u<v"  # u strictly dominates v
    RIGHT = "v<u"
    EQUIVALENT = "equivalent"
    NONDOMINATED = "non-dominated"


def dominates(u, v) -> bool:
    """Strict Pareto dominance: ``u`` no worse everywhere, better somewhere."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError("fitness vectors differ in length")
    return bool(np.all(u <= v) and np.any(u < v))


def compare(u, v) -> Dominance:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError("fitness vectors differ in length")
    if np.array_equal(u, v):
        return Dominance.EQUIVALENT
    if dominates(u, v):
        return Dominance.LEFT
    if dominates(v, u):
        return Dominance.RIGHT
    return Dominance.NONDOMINATED


def _clean(F) -> np.ndarray:
    F = np.array(F, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    F[np.isnan(F)] = np.inf
    return F


@dataclass(frozen=True)
class FrontAssignment:
    rank: np.ndarray       # 1 = non-dominated
    crowding: np.ndarray

    @property
    def fronts(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.rank == r) for r in range(1, int(self.rank.max()) + 1)]


def dominance_matrix(F) -> np.ndarray:
    """``D[i, j]`` is true when individual ``i`` strictly dominates ``j``."""
    F = _clean(F)
    le = np.all(F[:, None, :] <= F[None, :, :], axis=2)
    lt = np.any(F[:, None, :] < F[None, :, :], axis=2)
    return le & lt


def crowding_distance(F) -> np.ndarray:
    """Crowding distance within a single front, objectives scaled by the
    front's range. Boundary points get ``inf``; zero range contributes 0."""
    F = _clean(F)
    n, m = F.shape
    dist = np.zeros(n)
    if n <= 2:
        dist[:] = np.inf
        return dist
    idx = np.arange(n)
    for j in range(m):
        order = np.lexsort((idx, F[:, j]))
        f = F[order, j]
        dist[order[0]] = dist[order[-1]] = np.inf
        with np.errstate(invalid="ignore"):
            span = f[-1] - f[0]
        if not np.isfinite(span) or span <= 0:
            continue
        with np.errstate(invalid="ignore"):
            gaps = (f[2:] - f[:-2]) / span
        gaps[~np.isfinite(gaps)] = 0.0
        dist[order[1:-1]] += gaps
    return dist


def nondominated_sort(F) -> FrontAssignment:
    F = _clean(F)
    n = len(F)
    if n == 0:
        raise ValueError("empty population")
    D = dominance_matrix(F)
    dominated_by = D.sum(axis=0)
    rank = np.zeros(n, dtype=int)
    current = np.flatnonzero(dominated_by == 0)
    r = 1
    while current.size:
        rank[current] = r
        dominated_by = dominated_by - D[current].sum(axis=0)
        dominated_by[rank > 0] = -1
        current = np.flatnonzero(dominated_by == 0)
        r += 1
    crowd = np.zeros(n)
    for k in range(1, r):
        members = np.flatnonzero(rank == k)
        crowd[members] = crowding_distance(F[members])
    return FrontAssignment(rank, crowd)


def survive(F, S: int) -> np.ndarray:
    """Indices of the ``S`` survivors: whole fronts in rank order, the last
    partial front trimmed by descending crowding distance. Equal crowding is
    broken by the first objective, then by index, so the first-objective
    minimizer always survives."""
    F = _clean(F)
    n = len(F)
    if not 1 <= S <= n:
        raise ValueError("S must lie in [1, pool size]")
    fa = nondominated_sort(F)
    order = np.lexsort((np.arange(n), F[:, 0], -fa.crowding, fa.rank))
    return np.sort(order[:S])


def pick_final(val_loss, complexity, size, train_loss=None) -> tuple[int, bool]:
    """Index of the final model: lowest validation loss, then lower
    complexity, smaller size, lower index.

    Returns ``(index, fallback)``; ``fallback`` is true when every validation
    loss is non-finite and the pick used the training loss instead.
    """
    val = np.asarray(val_loss, dtype=float)
    comp = np.asarray(complexity, dtype=float)
    size = np.asarray(size, dtype=float)
    idx = np.arange(len(val))
    fallback = not np.isfinite(val).any()
    if fallback:
        if train_loss is None:
            raise ValueError("no finite validation loss and no training loss given")
        val = np.asarray(train_loss, dtype=float)
    val = np.where(np.isfinite(val), val, np.inf)
    order = np.lexsort((idx, size, comp, val))
    return int(order[0]), fallback
