"""Positive point prompts sampled as k-medoids of a mask's pixels.

Medoids are actual mask pixels, unlike centroids, which can fall outside a
concave mask.  Clustering is PAM (partitioning around medoids) with BUILD
initialization and best-improvement swaps; all tie-breaking is by lowest
index over the row-major pixel enumeration, so results are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .maskset import BinaryMask

# masks above this pixel count are subsampled (seeded) before clustering
MAX_CLUSTER_POINTS = 2000
MAX_SWAP_ITERATIONS = 100


@dataclass(frozen=True)
class PointPrompt:
    """Pixel coordinate prompt; x is the column, y the row."""

    x: int
    y: int
    label: int = 1


def kmedoids_prompts(mask: BinaryMask, k: int = 3, seed: int = 0) -> list[PointPrompt]:
    """Sample k positive point prompts inside the mask via PAM k-medoids.

    Euclidean distance over pixel coordinates.  Masks with fewer than k
    pixels return all of their pixels.  Masks larger than
    MAX_CLUSTER_POINTS pixels are uniformly subsampled with the given seed
    before clustering; medoids are members of the subsample, hence of the
    mask.  Returned prompts are sorted row-major.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    coords = np.argwhere(mask.bits)  # (n, 2) rows of (y, x), row-major order
    n = coords.shape[0]
    if n == 0:
        raise ValueError("cannot sample prompts from an empty mask")
    if n <= k:
        return [PointPrompt(x=int(c[1]), y=int(c[0])) for c in coords]

    if n > MAX_CLUSTER_POINTS:
        rng = np.random.default_rng(seed)
        chosen = rng.choice(n, size=MAX_CLUSTER_POINTS, replace=False)
        chosen.sort()  # keep row-major enumeration order
        coords = coords[chosen]
        if coords.shape[0] <= k:
            return [PointPrompt(x=int(c[1]), y=int(c[0])) for c in coords]

    dist = cdist(coords.astype(np.float64), coords.astype(np.float64))
    medoids = pam(dist, k)
    return [PointPrompt(x=int(coords[m][1]), y=int(coords[m][0])) for m in sorted(medoids)]


def pam(dist: np.ndarray, k: int, max_iter: int = MAX_SWAP_ITERATIONS) -> list[int]:
    """PAM k-medoids on a symmetric distance matrix; returns medoid indices.

    BUILD seeds greedily (first medoid minimizes total distance, each next
    one maximizes the cost reduction); SWAP applies the single best
    medoid/non-medoid exchange while it strictly reduces total cost, up to
    max_iter rounds.  Ties always resolve to the lowest index.
    """
    n = dist.shape[0]
    if dist.shape != (n, n):
        raise ValueError(f"distance matrix must be square, got {dist.shape}")
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")

    # BUILD
    medoids = [int(np.argmin(dist.sum(axis=1)))]
    nearest = dist[medoids[0]].copy()
    while len(medoids) < k:
        reduction = np.maximum(nearest[None, :] - dist, 0.0).sum(axis=1)
        reduction[medoids] = -np.inf
        best = int(np.argmax(reduction))
        medoids.append(best)
        np.minimum(nearest, dist[best], out=nearest)

    # SWAP
    for _ in range(max_iter):
        dm = dist[medoids]  # (k, n)
        assign = np.argmin(dm, axis=0)
        d1 = dm[assign, np.arange(n)]
        if k > 1:
            d2 = np.partition(dm, 1, axis=0)[1]
        else:
            d2 = np.full(n, np.inf)
        current = d1.sum()

        in_medoids = np.zeros(n, dtype=bool)
        in_medoids[medoids] = True
        others = np.nonzero(~in_medoids)[0]

        best_cost = current
        best_swap = None
        for pos in range(k):
            base = np.where(assign == pos, d2, d1)
            costs = np.minimum(base[:, None], dist[:, others]).sum(axis=0)
            idx = int(np.argmin(costs))
            if costs[idx] < best_cost:
                best_cost = float(costs[idx])
                best_swap = (pos, int(others[idx]))
        if best_swap is None:
            break
        medoids[best_swap[0]] = best_swap[1]

    return medoids


def total_cost(dist: np.ndarray, medoids: list[int]) -> float:
    """Sum over points of the distance to their nearest medoid."""
    return float(dist[medoids].min(axis=0).sum())
