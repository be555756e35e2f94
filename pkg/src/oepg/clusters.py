"""Hierarchical k-means centroids with queue-driven momentum updates."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import ConfigurationError, RandomStream


class AssignmentError(ValueError):
    pass


@dataclass
class ClusterHierarchy:
    """Centroids ``C[h]`` of shape (S_h, d) for each hierarchy h (0-based)."""

    scales: tuple[int, ...]
    centroids: list[np.ndarray]

    def __post_init__(self) -> None:
        self.scales = tuple(int(s) for s in self.scales)
        if any(a <= b for a, b in zip(self.scales, self.scales[1:])):
            raise ConfigurationError(f"scales must be strictly decreasing, got {self.scales}")
        if [len(c) for c in self.centroids] != list(self.scales):
            raise ConfigurationError("centroid counts do not match scales")

    @property
    def num_clusters(self) -> int:
        return sum(self.scales)

    @property
    def dim(self) -> int:
        return self.centroids[0].shape[1]

    def flat(self) -> np.ndarray:
        """All centroids stacked hierarchy-major (h ascending, then s)."""
        return np.concatenate(self.centroids, axis=0)

    def flat_index(self, h: int, s: int) -> int:
        return sum(self.scales[:h]) + s

    def copy(self) -> "ClusterHierarchy":
        return ClusterHierarchy(self.scales, [c.copy() for c in self.centroids])


def kmeans(points: np.ndarray, k: int, rng: RandomStream, max_iter: int = 100, tol: float = 1e-6) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding.

    An empty cluster is re-seeded with the point farthest from its currently
    assigned centroid.
    """
    x = np.asarray(points, dtype=np.float64)
    m = len(x)
    if m < k:
        raise ConfigurationError(f"need at least {k} points for {k} clusters, got {m}")
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(m)]
    closest = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = closest.sum()
        idx = rng.integers(m) if total <= 0 else rng.choice(m, p=closest / total)
        centers[j] = x[idx]
        closest = np.minimum(closest, ((x - centers[j]) ** 2).sum(axis=1))
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        new = centers.copy()
        counts = np.bincount(assign, minlength=k)
        for j in range(k):
            if counts[j]:
                new[j] = x[assign == j].mean(axis=0)
        for j in np.flatnonzero(counts == 0):
            far = d2[np.arange(m), assign].argmax()
            new[j] = x[far]
            d2[far, :] = 0.0
            assign[far] = j
        shift = np.abs(new - centers).max()
        centers = new
        if shift < tol:
            break
    return centers


def init_hierarchy(embeddings: np.ndarray, scales, seed: int) -> ClusterHierarchy:
    scales = tuple(int(s) for s in scales)
    x = np.asarray(embeddings, dtype=np.float64)
    if len(x) < max(scales):
        raise ConfigurationError(f"{len(x)} embeddings cannot seed {max(scales)} clusters")
    rng = RandomStream(seed)
    cents = [kmeans(x, s, rng.child(h)) for h, s in enumerate(scales)]
    return ClusterHierarchy(scales, cents)


def assign(embedding: np.ndarray, hierarchy: ClusterHierarchy, eps: float = 1e-12) -> list[int]:
    """Closest centroid per hierarchy by cosine similarity (lowest index on ties)."""
    v = np.asarray(embedding, dtype=np.float64).ravel()
    if v.shape[0] != hierarchy.dim:
        raise AssignmentError(f"embedding dim {v.shape[0]} != centroid dim {hierarchy.dim}")
    nv = np.linalg.norm(v)
    if nv == 0:
        raise AssignmentError("zero-norm embedding has no cosine similarity")
    out = []
    for c in hierarchy.centroids:
        sim = (c @ v) / (np.maximum(np.linalg.norm(c, axis=1), eps) * nv)
        out.append(int(np.argmax(sim)))
    return out


def momentum_update(centroid: np.ndarray, queue, m: float, budget: int | None = None) -> np.ndarray:
    q = np.asarray(queue, dtype=np.float64)
    budget = len(q) if budget is None else budget
    if len(q) != budget or budget == 0:
        raise ValueError(f"queue length {len(q)} must equal the budget {budget}")
    return m * np.asarray(centroid, dtype=np.float64) + ((1.0 - m) / budget) * q.sum(axis=0)


@dataclass
class ClusterQueues:
    budget: int
    queues: dict[tuple[int, int], list[np.ndarray]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.budget < 1:
            raise ConfigurationError("queue budget must be >= 1")

    def get(self, h: int, s: int) -> list[np.ndarray]:
        return self.queues.setdefault((h, s), [])

    def clear(self) -> None:
        self.queues.clear()

    def max_len(self) -> int:
        return max((len(q) for q in self.queues.values()), default=0)


def enqueue_and_maybe_update(
    queues: ClusterQueues, hierarchy: ClusterHierarchy, embedding, m: float
) -> list[bool]:
    """Enqueue into the assigned cluster of every hierarchy, updating full queues.

    Mutates ``queues`` and ``hierarchy`` in place; returns one flag per
    hierarchy telling whether its assigned centroid was updated.
    """
    v = np.array(embedding, dtype=np.float64).ravel()
    flags = []
    for h, s in enumerate(assign(v, hierarchy)):
        q = queues.get(h, s)
        q.append(v)
        if len(q) >= queues.budget:
            hierarchy.centroids[h][s] = momentum_update(hierarchy.centroids[h][s], q, m, queues.budget)
            q.clear()
            flags.append(True)
        else:
            flags.append(False)
    return flags
