"""Comparison placements: K-means clustering and plain DQN with uniform replay."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .agent import AgentConfig, Algorithm


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    iterations: int
    inertia: float
    history: list[float]


def inertia(points: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    diff = points - centroids[labels]
    return float(np.sum(diff * diff))


def _sq_dists(points, centroids):
    diff = points[:, None, :] - centroids[None, :, :]
    return np.sum(diff * diff, axis=2)


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centers = [points[rng.integers(n)]]
    for _ in range(1, k):
        d2 = _sq_dists(points, np.array(centers)).min(axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(points[rng.integers(n)])
        else:
            centers.append(points[rng.choice(n, p=d2 / total)])
    return np.array(centers, dtype=float)


def lloyd(points: np.ndarray, centroids: np.ndarray, max_iter: int = 100) -> KMeansResult:
    centroids = centroids.copy()
    k = len(centroids)
    labels = np.argmin(_sq_dists(points, centroids), axis=1)
    history = [inertia(points, centroids, labels)]
    it = 0
    for it in range(1, max_iter + 1):
        for c in range(k):
            members = labels == c
            if members.any():
                centroids[c] = points[members].mean(axis=0)
            else:
                # re-seed from the GU farthest from its current centroid
                far = np.argmax(np.sum((points - centroids[labels]) ** 2, axis=1))
                centroids[c] = points[far]
                labels[far] = c
        new_labels = np.argmin(_sq_dists(points, centroids), axis=1)
        history.append(inertia(points, centroids, new_labels))
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return KMeansResult(centroids, labels, it, history[-1], history)


def kmeans_place(gu_positions, n_abs: int, seed: int = 0, restarts: int = 10,
                 max_iter: int = 100) -> KMeansResult:
    """Best-of-``restarts`` k-means++/Lloyd clustering; ABSs go to the centroids."""
    points = np.asarray(gu_positions, dtype=float).reshape(-1, 2)
    if len(points) < n_abs:
        raise ValueError(f"need at least {n_abs} GUs for {n_abs} clusters, got {len(points)}")
    if n_abs < 1:
        raise ValueError("n_abs must be >= 1")
    rng = np.random.default_rng(seed)
    best: KMeansResult | None = None
    for _ in range(restarts):
        res = lloyd(points, _kmeans_pp(points, n_abs, rng), max_iter)
        if best is None or res.inertia < best.inertia:
            best = res
    return best


def dqn_variant(config: AgentConfig) -> AgentConfig:
    """Benchmark DQN: same network and environment, max-target, uniform replay."""
    return dataclasses.replace(config, algorithm=Algorithm.DQN, mu=0.0, nu=0.0)
