"""NSGA-II ranking and elitist truncation for two minimized objectives, plus 2-D hypervolume."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def dominates(a, b) -> bool:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return bool(np.all(a <= b) and np.any(a < b))


def non_dominated_sort(points) -> list:
    """Fast non-dominated sort; returns fronts as lists of indices (front 0 first)."""
    F = np.asarray(points, dtype=float)
    n = len(F)
    if n == 0:
        return []
    le = np.all(F[:, None, :] <= F[None, :, :], axis=2)
    lt = np.any(F[:, None, :] < F[None, :, :], axis=2)
    dom = le & lt  # dom[i, j]: i dominates j
    counts = dom.sum(axis=0)
    fronts = []
    current = np.flatnonzero(counts == 0)
    while len(current):
        fronts.append(sorted(current.tolist()))
        counts = counts - dom[current].sum(axis=0)
        counts[current] = -1
        current = np.flatnonzero(counts == 0)
    return fronts


def ranks_from_fronts(fronts, n) -> np.ndarray:
    rank = np.empty(n, dtype=int)
    for r, front in enumerate(fronts):
        rank[front] = r
    return rank


def crowding_distance(points) -> np.ndarray:
    """Crowding distance within one front.

    Extremes get +inf. Repeated objective vectors share one slot: the first
    occurrence carries the distance, later copies get 0.
    """
    F = np.asarray(points, dtype=float)
    n = len(F)
    if n == 0:
        return np.zeros(0)
    uniq, first, inv = np.unique(F, axis=0, return_index=True, return_inverse=True)
    inv = inv.ravel()
    m = len(uniq)
    d = np.zeros(m)
    if m <= 2:
        d[:] = np.inf
    else:
        for k in range(F.shape[1]):
            order = np.argsort(uniq[:, k], kind="stable")
            vals = uniq[order, k]
            d[order[0]] = d[order[-1]] = np.inf
            span = vals[-1] - vals[0]
            if span > 0 and np.isfinite(span):
                d[order[1:-1]] += (vals[2:] - vals[:-2]) / span
    out = np.zeros(n)
    # first occurrence of each unique vector (lowest index) keeps the distance
    out[first] = d
    return out


@dataclass
class ParetoArchive:
    ids: np.ndarray  # selected candidate ids
    indices: np.ndarray  # positions in the population passed to select_elites
    ranks: np.ndarray
    crowding: np.ndarray
    capacity: int

    @property
    def front1(self) -> np.ndarray:
        return self.indices[self.ranks == 0]


def select_elites(objectives, capacity: int, ids=None) -> ParetoArchive:
    """Fill by ascending rank; split the last front by crowding (ties: lower id first)."""
    if capacity < 1:
        raise ValueError("capacity must be >= 1")
    F = np.asarray(objectives, dtype=float).reshape(-1, 2)
    n = len(F)
    ids = np.arange(n) if ids is None else np.asarray(ids)
    fronts = non_dominated_sort(F)
    rank = ranks_from_fronts(fronts, n)
    crowd = np.zeros(n)
    chosen = []
    for front in fronts:
        front = np.asarray(front)
        cd = crowding_distance(F[front])
        crowd[front] = cd
        if len(chosen) + len(front) <= capacity:
            chosen.extend(front[np.argsort(ids[front], kind="stable")].tolist())
        else:
            room = capacity - len(chosen)
            order = np.lexsort((ids[front], -cd))
            chosen.extend(front[order[:room]].tolist())
        if len(chosen) >= capacity:
            break
    chosen = np.asarray(chosen, dtype=int)
    return ParetoArchive(ids=ids[chosen], indices=chosen, ranks=rank[chosen],
                         crowding=crowd[chosen], capacity=capacity)


def hypervolume_2d(points, ref) -> float:
    """Area dominated by ``points`` and bounded by ``ref`` (both objectives minimized)."""
    F = np.asarray(points, dtype=float).reshape(-1, 2)
    r = np.asarray(ref, dtype=float)
    F = F[np.all(F < r, axis=1)]
    if len(F) == 0:
        return 0.0
    F = F[np.lexsort((F[:, 1], F[:, 0]))]
    hv = 0.0
    best_f2 = r[1]
    for f1, f2 in F:
        if f2 < best_f2:
            hv += (r[0] - f1) * (best_f2 - f2)
            best_f2 = f2
    return float(hv)
