"""K-means partitioning of nodes into communities."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ContractError


class DataError(ValueError):
    pass


@dataclass(eq=False)
class ClusterAssignment:
    M: int
    assign: np.ndarray
    centroids: np.ndarray
    inertia: float
    n_iter: int = 0
    history: list[float] = field(default_factory=list)

    def same_cluster(self, i: int, j: int) -> bool:
        return same_cluster(self, i, j)


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d = (points * points).sum(1)[:, None] - 2.0 * points @ centroids.T + (centroids * centroids).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _plusplus(points: np.ndarray, M: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centers = [int(rng.integers(n))]
    closest = _sq_dists(points, points[centers]).ravel()
    for _ in range(1, M):
        total = closest.sum()
        if total <= 0:
            # every point already coincides with a center; take unused indices
            unused = np.setdiff1d(np.arange(n), centers)
            centers.append(int(unused[0]))
        else:
            centers.append(int(rng.choice(n, p=closest / total)))
        closest = np.minimum(closest, _sq_dists(points, points[centers[-1:]]).ravel())
    return points[centers].copy()


def kmeans(points, M: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-6) -> ClusterAssignment:
    """Lloyd iterations from k-means++ seeds.

    Ties go to the lowest cluster index (``argmin``). A cluster left empty is
    re-seeded at the point farthest from its current centroid.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    n = len(points)
    if M < 1 or M > n:
        raise ContractError(f"kmeans: need 1 <= M <= n, got M={M}, n={n}")
    if max_iter < 1:
        raise ContractError(f"kmeans: max_iter must be >= 1, got {max_iter}")
    if not np.all(np.isfinite(points)):
        raise DataError("kmeans: points contain NaN or Inf")

    rng = np.random.default_rng(seed)
    centroids = _plusplus(points, M, rng)
    d = _sq_dists(points, centroids)
    assign = d.argmin(axis=1)
    history = [float(d[np.arange(n), assign].sum())]
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        new = np.zeros_like(centroids)
        counts = np.bincount(assign, minlength=M)
        np.add.at(new, assign, points)
        for c in range(M):
            if counts[c]:
                new[c] /= counts[c]
            else:
                far = int(d[np.arange(n), assign].argmax())
                new[c] = points[far]
                assign[far] = c
        shift = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        centroids = new
        d = _sq_dists(points, centroids)
        assign = d.argmin(axis=1)
        history.append(float(d[np.arange(n), assign].sum()))
        if shift < tol:
            break

    # final centroids are exact member means for the final assignment
    counts = np.bincount(assign, minlength=M)
    for c in range(M):
        if counts[c]:
            centroids[c] = points[assign == c].mean(axis=0)
    inertia = float(((points - centroids[assign]) ** 2).sum())
    history.append(inertia)
    return ClusterAssignment(M, assign.astype(np.int64), centroids, inertia, n_iter, history)


def same_cluster(c: ClusterAssignment, i: int, j: int) -> bool:
    n = len(c.assign)
    if not (0 <= i < n and 0 <= j < n):
        raise ContractError(f"same_cluster: nodes ({i}, {j}) out of range for n={n}")
    return bool(c.assign[i] == c.assign[j])


def default_cluster_count(n: int, num_classes: int = 0) -> int:
    return num_classes if num_classes > 0 else int(np.ceil(np.sqrt(n)))
