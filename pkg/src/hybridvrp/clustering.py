"""Fuzzy C-Means over customer coordinates with depot replication.

Depot copies are appended to the data so that centroids are pulled toward
the depot; their membership rows are dropped before assignment.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .instance import Instance

log = logging.getLogger(__name__)

EMPTY_CLUSTER_WEIGHT = 1e-12


@dataclass(frozen=True)
class FcmConfig:
    m: float = 2.0
    tolerance: float = 1e-5
    max_iterations: int = 300
    seed: int = 0
    depot_copies: int | None = None  # None: one copy per cluster

    def __post_init__(self):
        if not self.m > 1:
            raise ValueError("fuzziness m must be > 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class MembershipMatrix:
    gamma: np.ndarray  # (points, clusters)
    centroids: np.ndarray  # (clusters, 2)
    iterations_run: int
    converged: bool
    objective_history: list[float] = field(default_factory=list)
    max_row_error: float = 0.0  # worst |row sum - 1| seen over all iterations

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]

    def hard_labels(self) -> np.ndarray:
        return np.argmax(self.gamma, axis=1)

    def customer_rows(self, n_customers: int) -> np.ndarray:
        """Membership rows of the customers only (depot copies dropped)."""
        return self.gamma[:n_customers]

    def to_json(self) -> dict:
        return {
            "centroids": self.centroids.tolist(),
            "gamma": self.gamma.tolist(),
            "iterations": self.iterations_run,
            "converged": self.converged,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def build_fcm_points(instance: Instance, c: int, copies: int | None = None) -> np.ndarray:
    """Customer coordinates followed by ``copies`` (default ``c``) copies of the depot."""
    if c < 0:
        raise ValueError("cluster count must be non-negative")
    copies = c if copies is None else copies
    customers = instance.coords[1:]
    depot = np.repeat(instance.coords[:1], copies, axis=0)
    return np.vstack([customers, depot]) if copies else customers.copy()


def update_centroids(points: np.ndarray, gamma: np.ndarray, m: float) -> np.ndarray:
    """Membership-weighted means ``sum(g**m * x) / sum(g**m)`` per cluster.

    A cluster whose total weight underflows is re-seeded at the point farthest
    from its own max-membership centroid.
    """
    points = np.asarray(points, dtype=float)
    w = np.asarray(gamma, dtype=float) ** m
    total = w.sum(axis=0)
    empty = total < EMPTY_CLUSTER_WEIGHT
    centroids = np.zeros((w.shape[1], points.shape[1]))
    ok = ~empty
    centroids[ok] = (w[:, ok].T @ points) / total[ok, None]
    if empty.any():
        if ok.any():
            labels = np.argmax(np.where(ok, gamma, -np.inf), axis=1)
            far = np.linalg.norm(points - centroids[labels], axis=1)
        else:
            far = np.linalg.norm(points - points.mean(axis=0), axis=1)
        taken: set[int] = set()
        for i in np.flatnonzero(empty):
            for k in np.argsort(-far, kind="stable"):
                if int(k) not in taken:
                    taken.add(int(k))
                    centroids[i] = points[k]
                    break
    return centroids


def update_memberships(points: np.ndarray, centroids: np.ndarray, m: float) -> np.ndarray:
    """``gamma[k, i] = 1 / sum_j (d_ki**2 / d_kj**2) ** (1 / (m - 1))``.

    Points sitting on a centroid get membership 1 there (the d -> 0 limit).
    """
    points = np.asarray(points, dtype=float)
    centroids = np.asarray(centroids, dtype=float)
    if len(centroids) == 0:
        raise ValueError("need at least one centroid")
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    gamma = np.empty_like(d2)
    zero = d2 == 0.0
    hit = zero.any(axis=1)
    if hit.any():
        gamma[hit] = 0.0
        gamma[hit, np.argmax(zero[hit], axis=1)] = 1.0
    rest = ~hit
    if rest.any():
        ratio = (d2[rest][:, :, None] / d2[rest][:, None, :]) ** (1.0 / (m - 1.0))
        gamma[rest] = 1.0 / ratio.sum(axis=2)
    return gamma


def fcm_objective(points: np.ndarray, gamma: np.ndarray, centroids: np.ndarray, m: float) -> float:
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return float(np.sum(gamma**m * d2))


def run_fcm(points: np.ndarray, c: int, config: FcmConfig = FcmConfig()) -> MembershipMatrix:
    points = np.asarray(points, dtype=float)
    if c < 1:
        raise ValueError("need at least one cluster")
    if c > len(points):
        raise ValueError(f"{c} clusters for {len(points)} points")
    rng = np.random.default_rng(config.seed)
    gamma = rng.random((len(points), c))
    gamma /= gamma.sum(axis=1, keepdims=True)
    history: list[float] = []
    worst = float(np.max(np.abs(gamma.sum(axis=1) - 1.0)))
    converged = False
    iterations = 0
    centroids = update_centroids(points, gamma, config.m)
    for iterations in range(1, config.max_iterations + 1):
        centroids = update_centroids(points, gamma, config.m)
        new = update_memberships(points, centroids, config.m)
        worst = max(worst, float(np.max(np.abs(new.sum(axis=1) - 1.0))))
        history.append(fcm_objective(points, new, centroids, config.m))
        change = float(np.max(np.abs(new - gamma)))
        gamma = new
        if change < config.tolerance:
            converged = True
            break
    return MembershipMatrix(gamma, centroids, iterations, converged, history, worst)


def intra_cluster_distance(points: np.ndarray, result: MembershipMatrix) -> float:
    """Sum of distances from each point to its max-membership centroid."""
    labels = np.argmax(result.gamma[: len(points)], axis=1)
    return float(np.linalg.norm(points - result.centroids[labels], axis=1).sum())


def derived_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


@dataclass
class ElbowResult:
    chosen: int
    candidates: list[int]
    distances: list[float]
    second_differences: dict[int, float]
    runs: dict[int, MembershipMatrix]
    warnings: list[str] = field(default_factory=list)


def fcm_for_instance(instance: Instance, c: int, config: FcmConfig) -> MembershipMatrix:
    points = build_fcm_points(instance, c, config.depot_copies)
    return run_fcm(points, c, config)


def select_cluster_count(instance: Instance, candidates, config: FcmConfig = FcmConfig()) -> ElbowResult:
    """Elbow of the intra-cluster distance curve (max second difference).

    Depot copies do not count toward the distance curve. Ties go to the
    smaller cluster count.
    """
    cands = sorted(set(int(c) for c in candidates))
    if not cands:
        raise ValueError("no cluster-count candidates")
    for c in cands:
        if c < instance.truck_count:
            raise ValueError(f"candidate {c} is below the truck count {instance.truck_count}")
    customers = instance.coords[1:]
    runs, dists = {}, []
    for c in cands:
        cfg = FcmConfig(config.m, config.tolerance, config.max_iterations, derived_seed(config.seed, c), config.depot_copies)
        runs[c] = fcm_for_instance(instance, c, cfg)
        dists.append(intra_cluster_distance(customers, runs[c]))
    if len(cands) < 3:
        msg = f"elbow needs >= 3 candidates, got {len(cands)}; using {cands[0]}"
        log.warning(msg)
        return ElbowResult(cands[0], cands, dists, {}, runs, [msg])
    second = {cands[k]: dists[k - 1] - 2 * dists[k] + dists[k + 1] for k in range(1, len(cands) - 1)}
    chosen = max(second, key=lambda c: (second[c], -c))
    return ElbowResult(chosen, cands, dists, second, runs)
