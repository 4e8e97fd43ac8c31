"""Lloyd k-means with k-means++ seeding and split-largest empty-cluster repair."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numba
import numpy as np

logger = logging.getLogger(__name__)

SPLIT_EPS = 1e-5


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    objective: float
    history: list[float] = field(default_factory=list)
    duplicates: bool = False


@numba.njit(cache=True)
def _assign_kernel(points, centroids, labels, dists):
    n, dim = points.shape
    k = centroids.shape[0]
    for i in range(n):
        best = np.inf
        arg = 0
        for c in range(k):
            s = 0.0
            for j in range(dim):
                t = points[i, j] - centroids[c, j]
                s += t * t
            if s < best:
                best = s
                arg = c
        labels[i] = arg
        dists[i] = best


def assign(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest centroid by exhaustive scan (lowest index on ties) and its squared distance."""
    pts = np.ascontiguousarray(points, dtype=np.float64)
    cents = np.ascontiguousarray(centroids, dtype=np.float64)
    labels = np.empty(len(pts), dtype=np.int64)
    dists = np.empty(len(pts), dtype=np.float64)
    _assign_kernel(pts, cents, labels, dists)
    return labels, dists


def kmeanspp(points: np.ndarray, ncentroids: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centroids = np.empty((ncentroids, points.shape[1]), dtype=np.float64)
    centroids[0] = points[rng.integers(n)]
    closest = ((points - centroids[0]) ** 2).sum(1)
    for c in range(1, ncentroids):
        total = closest.sum()
        if total <= 0.0:
            # fewer distinct points than centroids
            centroids[c] = points[rng.integers(n)]
        else:
            idx = np.searchsorted(np.cumsum(closest), rng.random() * total, side="right")
            centroids[c] = points[min(idx, n - 1)]
        closest = np.minimum(closest, ((points - centroids[c]) ** 2).sum(1))
    return centroids


def _update(points, labels, centroids):
    k, dim = centroids.shape
    counts = np.bincount(labels, minlength=k)
    sums = np.stack([np.bincount(labels, weights=points[:, j], minlength=k) for j in range(dim)], axis=1)
    new = centroids.copy()
    nz = counts > 0
    new[nz] = sums[nz] / counts[nz, None]
    return new, counts


def _repair(points, labels, centroids, counts):
    """Move each empty centroid next to the most populated cluster's centroid."""
    fixed = centroids.copy()
    counts = counts.copy()
    labels = labels.copy()  # tracks split members so later repairs see the real clusters
    changed = False
    for e in np.flatnonzero(counts == 0):
        big = int(np.argmax(counts))
        idx = np.flatnonzero(labels == big)
        members = points[idx]
        if len(idx) < 2 or np.all(members == members[0]):
            continue
        c = fixed[big].copy()
        scale = np.where(c != 0.0, np.abs(c), 1.0) * SPLIT_EPS
        sign = np.where(np.arange(len(c)) % 2 == 0, 1.0, -1.0)
        fixed[e] = c + sign * scale
        fixed[big] = c - sign * scale
        moved = ((members - fixed[e]) ** 2).sum(1) < ((members - fixed[big]) ** 2).sum(1)
        if moved.all() or not moved.any():
            moved = np.arange(len(idx)) < len(idx) // 2
        labels[idx[moved]] = e
        counts[e] = int(moved.sum())
        counts[big] -= counts[e]
        changed = True
    return fixed, changed


def kmeans(points: np.ndarray, ncentroids: int, iters: int = 25, seed: int = 0,
           init: np.ndarray | None = None) -> KMeansResult:
    """Lloyd iterations; ``history`` holds the objective after every assignment step.

    The history is non-increasing: a repair that would raise the objective is
    rolled back.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if len(pts) < 1:
        raise ValueError("kmeans needs at least one point")
    if ncentroids < 1:
        raise ValueError("ncentroids must be >= 1")
    rng = np.random.default_rng(seed)
    duplicates = ncentroids > len(pts)
    if duplicates:
        logger.info("kmeans: %d centroids for %d points, duplicates permitted", ncentroids, len(pts))
    centroids = kmeanspp(pts, ncentroids, rng) if init is None else np.array(init, dtype=np.float64)
    labels, dists = assign(pts, centroids)
    history = [float(dists.sum())]
    for _ in range(iters):
        centroids, counts = _update(pts, labels, centroids)
        repaired, changed = _repair(pts, labels, centroids, counts)
        new_labels, new_dists = assign(pts, repaired)
        if changed:
            if new_dists.sum() > history[-1]:
                new_labels, new_dists = assign(pts, centroids)
            else:
                centroids = repaired
        converged = np.array_equal(new_labels, labels)
        labels, dists = new_labels, new_dists
        history.append(float(dists.sum()))
        if converged and not changed:
            break
    if len(np.unique(centroids, axis=0)) < ncentroids:
        duplicates = True
    return KMeansResult(centroids, labels, float(dists.sum()), history, duplicates)
