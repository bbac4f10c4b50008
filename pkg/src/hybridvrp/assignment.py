"""Capacity-aware defuzzification of FCM memberships.

Each round, every unassigned customer nominates its best remaining cluster.
Each cluster takes its nominees in decreasing membership order until the
next one does not fit; rejected customers drop that cluster from their
preference list and try again next round.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class Cluster:
    members: list[int]
    centroid: tuple[float, float]
    aggregate_demand: int
    capacity: int

    @property
    def residual(self) -> int:
        return self.capacity - self.aggregate_demand


@dataclass
class ClusterAssignment:
    cluster_of: dict[int, int]
    clusters: list[Cluster]
    overflow: bool = False
    overflowed: list[int] = field(default_factory=list)
    rounds: list[list[tuple[int, int, bool]]] = field(default_factory=list)  # (customer, cluster, admitted)

    def to_json(self) -> dict:
        return {
            "cluster_of": {str(k): v for k, v in sorted(self.cluster_of.items())},
            "clusters": [
                {
                    "members": c.members,
                    "centroid": list(c.centroid),
                    "aggregate_demand": c.aggregate_demand,
                    "capacity": c.capacity,
                }
                for c in self.clusters
            ],
            "overflow": self.overflow,
            "overflowed": self.overflowed,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def cluster_capacity(truck_capacity: int, n_clusters: int, n_trucks: int) -> int:
    """Truck capacity split evenly over the clusters one truck will serve.

    Rounded down when the split is not exact, so that the clusters one truck
    serves never exceed its capacity together.
    """
    if n_trucks < 1 or n_clusters < 1 or n_clusters % n_trucks:
        raise ValueError(f"{n_clusters} clusters is not a positive multiple of {n_trucks} trucks")
    return truck_capacity // (n_clusters // n_trucks)


def assign(
    memberships: np.ndarray,
    demands,
    capacities,
    centroids=None,
    customer_ids=None,
    coords=None,
) -> ClusterAssignment:
    """Run preference rounds until every customer is placed.

    ``memberships`` is (customers x clusters); row k belongs to
    ``customer_ids[k]`` (default ``k + 1``, i.e. instance node ids). With
    ``coords`` (one row per customer) each cluster's centroid is the mean of
    its members; otherwise ``centroids`` is copied through.
    """
    gamma = np.asarray(memberships, dtype=float)
    n, c = gamma.shape
    demands = [int(d) for d in demands]
    if len(demands) != n:
        raise ValueError("one demand per membership row")
    if np.isscalar(capacities):
        capacities = [int(capacities)] * c
    capacities = [int(q) for q in capacities]
    if len(capacities) != c:
        raise ValueError("one capacity per cluster")
    ids = list(range(1, n + 1)) if customer_ids is None else [int(i) for i in customer_ids]
    centroids = np.zeros((c, 2)) if centroids is None else np.asarray(centroids, dtype=float)

    # preference order: decreasing membership, lower cluster id on ties
    prefs = [sorted(range(c), key=lambda j, k=k: (-gamma[k, j], j)) for k in range(n)]
    residual = list(capacities)
    where: dict[int, int] = {}
    members: list[list[int]] = [[] for _ in range(c)]
    rounds: list[list[tuple[int, int, bool]]] = []
    overflowed: list[int] = []
    unassigned = list(range(n))

    while unassigned:
        nominees: dict[int, list[int]] = {}
        for k in unassigned:
            if prefs[k]:
                nominees.setdefault(prefs[k][0], []).append(k)
        log_round = []
        for j in sorted(nominees):
            queue = sorted(nominees[j], key=lambda k: (-gamma[k, j], ids[k]))
            full = False
            for k in queue:
                if not full and demands[k] <= residual[j]:
                    residual[j] -= demands[k]
                    where[k] = j
                    members[j].append(k)
                    log_round.append((ids[k], j, True))
                else:
                    full = True
                    prefs[k].pop(0)
                    log_round.append((ids[k], j, False))
        rounds.append(log_round)
        still = []
        for k in unassigned:
            if k in where:
                continue
            if not prefs[k]:
                # no cluster can take it: place where the most room is left
                j = max(range(c), key=lambda j: (residual[j], -j))
                residual[j] -= demands[k]
                where[k] = j
                members[j].append(k)
                overflowed.append(ids[k])
                log.warning("customer %d overflows cluster %d", ids[k], j)
                continue
            still.append(k)
        unassigned = still

    if coords is not None:
        coords = np.asarray(coords, dtype=float)
        centroids = np.array(
            [coords[members[j]].mean(axis=0) if members[j] else centroids[j] for j in range(c)]
        )
    clusters = [
        Cluster(
            members=sorted(ids[k] for k in members[j]),
            centroid=(float(centroids[j, 0]), float(centroids[j, 1])),
            aggregate_demand=sum(demands[k] for k in members[j]),
            capacity=capacities[j],
        )
        for j in range(c)
    ]
    return ClusterAssignment(
        cluster_of={ids[k]: j for k, j in sorted(where.items())},
        clusters=clusters,
        overflow=bool(overflowed),
        overflowed=sorted(overflowed),
        rounds=rounds,
    )
