"""K-means partitioning of scenes over class-count feature vectors.

Hand-rolled Lloyd's iteration so the contract is fully pinned: k-means++
seeding from the provided seed, nearest-centroid ties resolved to the lower
cluster index, empty clusters repaired by reseeding the farthest point, and
bit-for-bit deterministic assignments for a fixed (data, k, seed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import KTooLargeError
from .scenes import Dataset, class_count_vector

CONVERGENCE_TOL = 1e-6
MAX_ITERATIONS = 300


@dataclass(frozen=True)
class ClusterAssignment:
    k: int
    assignments: dict[str, int]
    centroids: np.ndarray
    inertia: float

    def members(self, cluster_index: int) -> list[str]:
        return [sid for sid, c in self.assignments.items() if c == cluster_index]


def feature_matrix(dataset: Dataset) -> tuple[np.ndarray, list[str], list[str]]:
    """Class-count vectors for every scene, with the label order used."""
    order = sorted(dataset.class_universe)
    matrix = np.stack(
        [class_count_vector(scene, order) for scene in dataset.scenes]
    ).astype(np.float64)
    return matrix, [s.scene_id for s in dataset.scenes], order


def _kmeans_plusplus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    centroids[0] = points[rng.integers(0, n)]
    for i in range(1, k):
        dist_sq = np.min(
            ((points[:, None, :] - centroids[None, :i, :]) ** 2).sum(axis=2), axis=1
        )
        total = dist_sq.sum()
        if total <= 0.0:
            centroids[i] = points[rng.integers(0, n)]
            continue
        centroids[i] = points[rng.choice(n, p=dist_sq / total)]
    return centroids


def _assign(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    dist_sq = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(dist_sq, axis=1)  # argmin takes the lowest index on ties
    return labels, dist_sq


def _lloyd(
    points: np.ndarray, k: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, float, list[float]]:
    """Run Lloyd's iteration; returns (labels, centroids, inertia, history)."""
    centroids = _kmeans_plusplus(points, k, rng)
    history: list[float] = []
    labels, dist_sq = _assign(points, centroids)
    for _ in range(MAX_ITERATIONS):
        # Repair empty clusters with the point farthest from its centroid.
        for cluster in range(k):
            if not np.any(labels == cluster):
                assigned = dist_sq[np.arange(len(labels)), labels]
                farthest = int(np.argmax(assigned))
                centroids[cluster] = points[farthest]
                labels, dist_sq = _assign(points, centroids)
        history.append(float(dist_sq[np.arange(len(labels)), labels].sum()))
        new_centroids = centroids.copy()
        for cluster in range(k):
            members = points[labels == cluster]
            if len(members):
                new_centroids[cluster] = members.mean(axis=0)
        shift = np.max(np.abs(new_centroids - centroids))
        centroids = new_centroids
        new_labels, dist_sq = _assign(points, centroids)
        stable = bool(np.array_equal(new_labels, labels))
        labels = new_labels
        # Label stability keeps the returned centroids exact member means.
        if shift < CONVERGENCE_TOL and stable and len(np.unique(labels)) == k:
            break
    inertia = float(dist_sq[np.arange(len(labels)), labels].sum())
    history.append(inertia)
    return labels, centroids, inertia, history


def cluster_dataset(dataset: Dataset, k: int, seed: int) -> ClusterAssignment:
    """Partition scenes into k clusters of similar class-count vectors."""
    if k < 1:
        raise ValueError("k must be positive")
    n = len(dataset.scenes)
    if k > n:
        raise KTooLargeError(f"k={k} exceeds {n} scenes")
    points, scene_ids, _ = feature_matrix(dataset)
    rng = np.random.default_rng(seed)
    labels, centroids, inertia, _ = _lloyd(points, k, rng)
    return ClusterAssignment(
        k=k,
        assignments={sid: int(c) for sid, c in zip(scene_ids, labels)},
        centroids=centroids,
        inertia=inertia,
    )


def silhouette_score(points: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette over all points; s_i = 0 where the score is undefined
    (singleton cluster or zero max(a, b))."""
    n = len(points)
    dist = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=2))
    scores = np.zeros(n)
    clusters = np.unique(labels)
    for i in range(n):
        own = labels[i]
        own_mask = labels == own
        own_size = int(own_mask.sum())
        if own_size <= 1:
            continue
        a = dist[i][own_mask].sum() / (own_size - 1)
        b = np.inf
        for other in clusters:
            if other == own:
                continue
            other_mask = labels == other
            b = min(b, dist[i][other_mask].mean())
        denom = max(a, b)
        if denom > 0:
            scores[i] = (b - a) / denom
    return float(scores.mean())


def choose_k(dataset: Dataset, k_max: int, seed: int) -> int:
    """Pick k by silhouette score over k in [2, min(k_max, n-1)].

    Returns 1 for datasets too small or too uniform to cluster.
    """
    n = len(dataset.scenes)
    if n < 3:
        return 1
    points, _, _ = feature_matrix(dataset)
    if np.all(points == points[0]):
        return 1
    best_k, best_score = 1, -np.inf
    for k in range(2, min(k_max, n - 1) + 1):
        rng = np.random.default_rng(seed)
        labels, _, _, _ = _lloyd(points, k, rng)
        score = silhouette_score(points, labels)
        if score > best_score:
            best_k, best_score = k, score
    return best_k
