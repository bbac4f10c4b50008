"""Cluster-first CVRP pipelines around a QUBO sampler.

H2S   FCM with one cluster per truck, capacity-aware assignment, then one
      TSP per cluster anchored at the depot.
H3S   FCM with an elbow-selected cluster count (a multiple of the truck
      count), assignment, a CVRP over the cluster centroids that decides
      which truck serves which clusters, then one TSP per truck over the
      customers of its clusters.

Every routing subproblem is a QUBO handed to a sampler; the best feasible
decoded sample wins.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .assignment import ClusterAssignment, assign, cluster_capacity
from .clustering import ElbowResult, FcmConfig, MembershipMatrix, derived_seed, fcm_for_instance, select_cluster_count
from .instance import Instance, cost_matrix
from .qubo import PenaltyWeights
from .routing_qubo import (
    PENALTY_GROUPS,
    RouteSolution,
    RoutingModel,
    RoutingProblem,
    annealing_schedule,
    build_cvrp_qubo,
    complete_auxiliaries,
    decode,
    encode_arcs,
    greedy_repair,
)
from .sampler import SamplerConfig, SampleSet, anneal

log = logging.getLogger(__name__)

STRATEGIES = ("h2s", "h3s")
WEIGHT_PROFILES = ("annealing", "exact")
# keys mixed into the sampler seed so stages never share a random stream
_TSP_STREAM, _CVRP_STREAM = 1, 2


class PipelineError(RuntimeError):
    """A stage produced no feasible solution."""

    def __init__(self, message: str, stage: str, penalties: dict[str, float] | None = None):
        super().__init__(message)
        self.stage = stage
        self.penalties = dict(penalties or {})


@dataclass(frozen=True)
class PipelineConfig:
    strategy: str = "h2s"
    fcm: FcmConfig = FcmConfig()
    weights: PenaltyWeights | None = None  # fixed weights for every subproblem; overrides the profile
    sampler: SamplerConfig = SamplerConfig()
    cluster_candidates: tuple[int, ...] | None = None  # H3S only; None: p, 2p, 3p, 4p
    repair_enabled: bool = False
    workers: int | None = None  # concurrent TSP stages
    weight_profile: str = "annealing"  # per-subproblem weights: "annealing" or "exact"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.weight_profile not in WEIGHT_PROFILES:
            raise ValueError(f"unknown weight profile {self.weight_profile!r}; expected one of {WEIGHT_PROFILES}")
        if self.cluster_candidates is not None:
            object.__setattr__(self, "cluster_candidates", tuple(int(c) for c in self.cluster_candidates))

    def with_seed(self, seed: int) -> "PipelineConfig":
        """Same settings with both the clustering and the sampler seeded by ``seed``."""
        return replace(self, fcm=replace(self.fcm, seed=seed), sampler=replace(self.sampler, seed=seed))


@dataclass
class StageResult:
    name: str
    nodes: list[int]  # global ids behind the model's local indices; 0 is the depot
    solution: RouteSolution
    num_vars: int
    feasible_samples: int
    seed: int

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "nodes": self.nodes,
            "solution": self.solution.to_json(),
            "num_vars": self.num_vars,
            "feasible_samples": self.feasible_samples,
            "seed": self.seed,
        }


@dataclass
class ValidationReport:
    feasible: bool
    cost: int
    loads: list[int]
    reasons: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"feasible": self.feasible, "cost": self.cost, "loads": self.loads, "reasons": self.reasons}


@dataclass
class PipelineReport:
    instance: str
    strategy: str
    solution: RouteSolution
    memberships: MembershipMatrix
    assignment: ClusterAssignment
    truck_clusters: list[list[int]]
    stages: list[StageResult]
    validation: ValidationReport
    seeds: dict
    timings: dict[str, float]
    elbow: ElbowResult | None = None
    centroid_solution: RouteSolution | None = None

    @property
    def cost(self) -> int:
        return self.solution.total_cost

    @property
    def feasible(self) -> bool:
        return self.solution.feasible

    def to_json(self, timings: bool = True) -> dict:
        out = {
            "instance": self.instance,
            "strategy": self.strategy,
            "cost": self.solution.total_cost,
            "feasible": self.solution.feasible,
            "solution": self.solution.to_json(),
            "truck_clusters": self.truck_clusters,
            "fcm": self.memberships.to_json(),
            "assignment": self.assignment.to_json(),
            "stages": [s.to_json() for s in self.stages],
            "validation": self.validation.to_json(),
            "seeds": self.seeds,
            "elbow": None,
            "centroid_cvrp": self.centroid_solution.to_json() if self.centroid_solution else None,
        }
        if self.elbow is not None:
            out["elbow"] = {
                "chosen": self.elbow.chosen,
                "candidates": self.elbow.candidates,
                "distances": self.elbow.distances,
                "second_differences": {str(k): v for k, v in self.elbow.second_differences.items()},
                "warnings": self.elbow.warnings,
            }
        if timings:
            out["timings"] = self.timings
        return out

    def dumps(self, timings: bool = True) -> str:
        return json.dumps(self.to_json(timings), sort_keys=True, indent=1)


# -- independent checker ------------------------------------------------------


def _euc2d(a, b) -> int:
    return int(math.floor(math.hypot(a.x - b.x, a.y - b.y) + 0.5))


def validate(solution: RouteSolution | Sequence[Sequence[int]], instance: Instance, fleet_exact: bool = False) -> ValidationReport:
    """Check a solution against the instance directly, without any QUBO.

    Each customer exactly once, per-truck demand within capacity, at most
    ``truck_count`` routes of known customer ids (the depot is implicit at
    both ends). A decoded :class:`RouteSolution` must also have walked
    cleanly from the depot. ``fleet_exact`` additionally requires every truck to leave
    the depot. The cost is recomputed from the coordinates.
    """
    routes = solution.routes if isinstance(solution, RouteSolution) else solution
    routes = [list(r) for r in routes]
    nodes = instance.nodes
    reasons: list[str] = []
    if isinstance(solution, RouteSolution):
        # arcs the route walk could not use (branches, dead ends, loose cycles)
        for k, problems in enumerate(solution.malformations):
            if problems:
                reasons.append(f"malformed route: truck {k}: {'; '.join(problems)}")
    if len(routes) > instance.truck_count:
        reasons.append(f"too many routes: {len(routes)} > {instance.truck_count}")
    unknown = sorted({c for r in routes for c in r if not (isinstance(c, (int, np.integer)) and 0 <= c < len(nodes))})
    if unknown:
        return ValidationReport(False, 0, [], [f"unknown node: {', '.join(map(str, unknown))}"])
    if any(0 in r for r in routes):
        reasons.append("depot inside a route")
    seen: dict[int, int] = {}
    for r in routes:
        for c in r:
            seen[c] = seen.get(c, 0) + 1
    missing = [c for c in range(1, len(nodes)) if c not in seen]
    multi = sorted(c for c, k in seen.items() if k > 1 and c != 0)
    if missing:
        reasons.append(f"unvisited: {', '.join(map(str, missing))}")
    if multi:
        reasons.append(f"multiply-visited: {', '.join(map(str, multi))}")
    loads = [sum(nodes[c].demand for c in r) for r in routes]
    for k, load in enumerate(loads):
        if load > instance.truck_capacity:
            reasons.append(f"over capacity: truck {k} carries {load} > {instance.truck_capacity}")
    if fleet_exact:
        idle = [k for k in range(instance.truck_count) if k >= len(routes) or not routes[k]]
        if idle:
            reasons.append(f"idle trucks: {', '.join(map(str, idle))}")
    cost = 0
    for r in routes:
        if r:
            stops = [0, *r, 0]
            cost += sum(_euc2d(nodes[a], nodes[b]) for a, b in zip(stops, stops[1:]))
    return ValidationReport(not reasons, cost, loads, reasons)


# -- penalty view of an assembled solution -----------------------------------


def solution_penalties(instance: Instance, routes: Sequence[Sequence[int]]) -> dict[str, float]:
    """Penalty energy of ``routes`` under the instance's CVRP constraints.

    Each truck is scored on a one-truck CVRP model over its own customers;
    the cross-truck part of the visit constraint (each customer served by
    exactly one truck) is added on top with the same weight.
    """
    weights = PenaltyWeights.default_for(instance.cost_matrix())
    demands = instance.demands
    total = {g: 0.0 for g in PENALTY_GROUPS}
    served = np.zeros(instance.n, dtype=np.int64)
    for route in routes:
        if not route:
            continue
        np.add.at(served, list(route), 1)
        nodes = [0, *sorted(set(route) - {0})]
        pos = {g: k for k, g in enumerate(nodes)}
        sub = instance.cost_matrix()[np.ix_(nodes, nodes)]
        problem = RoutingProblem(sub, tuple(int(demands[g]) for g in nodes), 1, instance.truck_capacity, weights)
        rm = build_cvrp_qubo(problem)
        stops = [0, *(pos[c] for c in route), 0]
        # a customer listed twice in a row has no arc; the served count still sees it
        arcs = sorted({(a, b) for a, b in zip(stops, stops[1:]) if a != b})
        sol = decode(rm, encode_arcs(rm, [arcs]))
        for g, v in sol.penalty_breakdown.items():
            total[g] += v
    total["visit"] += weights.lambda_visit * float(np.sum((served[1:] - 1) ** 2))
    return total


def assemble_solution(instance: Instance, routes: Sequence[Sequence[int]], **flags) -> RouteSolution:
    routes = [list(map(int, r)) for r in routes]
    penalties = solution_penalties(instance, routes)
    cost = sum(instance.route_cost(r) for r in routes)
    feasible = all(v == 0 for v in penalties.values())
    return RouteSolution(routes, cost, penalties, feasible, [[] for _ in routes], [[] for _ in routes], **flags)


# -- sampling one routing subproblem -----------------------------------------


def weights_for(cost: np.ndarray, demands, config: PipelineConfig) -> PenaltyWeights:
    if config.weights is not None:
        return config.weights
    if config.weight_profile == "exact":
        return PenaltyWeights.default_for(cost)
    return PenaltyWeights.annealing_for(cost, demands)


def solve_routing(rm: RoutingModel, config: PipelineConfig, seed: int, stage: str, sampler=None) -> tuple[RouteSolution, int]:
    """Sample ``rm`` and return the cheapest feasible decoded sample.

    Auxiliary bits (order and slack) are completed from the edge bits before
    decoding. Returns ``(solution, feasible sample count)``; raises
    :class:`PipelineError` if no sample is feasible and repair is disabled
    or fails.
    """
    if sampler is None:
        schedule = config.sampler.beta_schedule or annealing_schedule(rm.problem)
        samples: SampleSet = anneal(rm.model, replace(config.sampler, seed=seed, beta_schedule=schedule))
    else:
        samples = sampler.sample(rm.model)
    best: RouteSolution | None = None
    fallback: RouteSolution | None = None
    feasible = 0
    for bits, _, count in samples:
        sol = decode(rm, complete_auxiliaries(rm, bits))
        if sol.feasible:
            feasible += count
            if best is None or sol.total_cost < best.total_cost:
                best = sol
        elif fallback is None:
            fallback = sol
    if best is not None:
        return best, feasible
    if fallback is None:
        raise PipelineError(f"{stage}: sampler returned no samples", stage)
    if config.repair_enabled:
        repaired = greedy_repair(fallback, rm)
        if repaired.feasible:
            log.info("%s: repaired the lowest-energy sample", stage)
            return repaired, 0
        raise PipelineError(f"{stage}: no feasible sample and repair failed ({repaired.reason})", stage, fallback.penalty_breakdown)
    raise PipelineError(
        f"{stage}: no feasible sample in {len(samples)} distinct samples; penalties {fallback.penalty_breakdown}",
        stage,
        fallback.penalty_breakdown,
    )


def _tsp_stage(instance: Instance, customers: list[int], config: PipelineConfig, seed: int, name: str, sampler) -> StageResult:
    nodes = [0, *customers]
    cost = instance.cost_matrix()[np.ix_(nodes, nodes)]
    demands = (0,) * len(nodes)
    problem = RoutingProblem(cost, demands, 1, None, weights_for(cost, demands, config))
    rm = build_cvrp_qubo(problem)
    local, feasible = solve_routing(rm, config, seed, name, sampler)
    routes = [[nodes[k] for k in r] for r in local.routes]
    solution = replace(local, routes=routes)
    return StageResult(name, nodes, solution, rm.model.num_vars, feasible, seed)


def _route_trucks(instance, assignment, truck_clusters, config, sampler) -> tuple[list[list[int]], list[StageResult]]:
    jobs = []
    for clusters in truck_clusters:
        customers = sorted(c for k in clusters for c in assignment.clusters[k].members)
        seed = derived_seed(config.sampler.seed, _TSP_STREAM, *sorted(clusters))
        name = "tsp[" + ",".join(map(str, clusters)) + "]"
        jobs.append((customers, seed, name))

    def run(job):
        customers, seed, name = job
        if not customers:
            return None
        return _tsp_stage(instance, customers, config, seed, name, sampler)

    workers = max(1, min(config.workers or os.cpu_count() or 1, len(jobs) or 1))
    if workers == 1:
        results = [run(j) for j in jobs]
    else:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, jobs))
    routes = [r.solution.routes[0] if r else [] for r in results]
    return routes, [r for r in results if r is not None]


def _assign(instance: Instance, mm: MembershipMatrix, capacity: int) -> ClusterAssignment:
    customers = instance.n - 1
    return assign(mm.customer_rows(customers), instance.demands[1:], capacity, mm.centroids, coords=instance.coords[1:])


def _finish(instance, config, mm, assignment, truck_clusters, timings, seeds, sampler, t_start, **extra) -> PipelineReport:
    t = time.perf_counter()
    routes, stages = _route_trucks(instance, assignment, truck_clusters, config, sampler)
    timings["tsp"] = time.perf_counter() - t
    seeds["tsp"] = [s.seed for s in stages]
    repaired = any(s.solution.repaired for s in stages) or bool(
        extra.get("centroid_solution") and extra["centroid_solution"].repaired
    )
    solution = assemble_solution(instance, routes, repaired=repaired, overflow=assignment.overflow)
    report = validate(solution, instance)
    timings["total"] = time.perf_counter() - t_start
    stages = extra.pop("cvrp_stage", []) + stages
    return PipelineReport(
        instance.name, config.strategy, solution, mm, assignment, truck_clusters, stages, report, seeds, timings, **extra
    )


def default_candidates(truck_count: int) -> tuple[int, ...]:
    return tuple(truck_count * k for k in (1, 2, 3, 4))


@dataclass
class ClusterStage:
    memberships: MembershipMatrix
    assignment: ClusterAssignment
    elbow: ElbowResult | None
    fcm_seed: int
    timings: dict[str, float]

    @property
    def clusters(self) -> int:
        return self.memberships.centroids.shape[0]


def cluster_stage(instance: Instance, config: PipelineConfig) -> ClusterStage:
    """FCM and capacity-aware assignment as ``config.strategy`` runs them.

    H2S uses one cluster per truck; H3S picks the cluster count by the
    elbow rule over ``cluster_candidates``.
    """
    t_start = time.perf_counter()
    p, Q = instance.truck_count, instance.truck_capacity
    if config.strategy == "h2s":
        c, elbow = p, None
        fcm_seed = derived_seed(config.fcm.seed, p)
        mm = fcm_for_instance(instance, p, replace(config.fcm, seed=fcm_seed))
    else:
        candidates = config.cluster_candidates or default_candidates(p)
        bad = [c for c in candidates if c < 1 or c % p]
        if bad:
            raise ValueError(f"cluster candidates {bad} are not multiples of the truck count {p}")
        elbow = select_cluster_count(instance, candidates, config.fcm)
        c = elbow.chosen
        mm = elbow.runs[c]
        fcm_seed = derived_seed(config.fcm.seed, c)
    timings = {"fcm": time.perf_counter() - t_start}
    t = time.perf_counter()
    assignment = _assign(instance, mm, cluster_capacity(Q, c, p))
    timings["assignment"] = time.perf_counter() - t
    return ClusterStage(mm, assignment, elbow, fcm_seed, timings)


def run_h2s(instance: Instance, config: PipelineConfig = PipelineConfig(), sampler=None) -> PipelineReport:
    t_start = time.perf_counter()
    config = replace(config, strategy="h2s")
    stage = cluster_stage(instance, config)
    seeds = {"fcm": stage.fcm_seed, "sampler": config.sampler.seed}
    truck_clusters = [[k] for k in range(instance.truck_count)]
    return _finish(
        instance, config, stage.memberships, stage.assignment, truck_clusters, stage.timings, seeds, sampler, t_start
    )


def run_h3s(instance: Instance, config: PipelineConfig = PipelineConfig(), sampler=None) -> PipelineReport:
    t_start = time.perf_counter()
    config = replace(config, strategy="h3s")
    p, Q = instance.truck_count, instance.truck_capacity
    stage = cluster_stage(instance, config)
    elbow, mm, assignment, timings = stage.elbow, stage.memberships, stage.assignment, stage.timings
    c = stage.clusters

    # compressed nodes: one per cluster at its members' mean, carrying their total demand
    t = time.perf_counter()
    points = [instance.nodes[0].point, *(cl.centroid for cl in assignment.clusters)]
    cost = cost_matrix(points)
    demands = (0, *(cl.aggregate_demand for cl in assignment.clusters))
    problem = RoutingProblem(cost, demands, p, Q, weights_for(cost, demands, config))
    rm = build_cvrp_qubo(problem)
    cvrp_seed = derived_seed(config.sampler.seed, _CVRP_STREAM, c)
    centroid_solution, feasible = solve_routing(rm, config, cvrp_seed, "cvrp", sampler)
    timings["cvrp"] = time.perf_counter() - t
    cvrp_stage = StageResult("cvrp", [0, *range(1, c + 1)], centroid_solution, rm.model.num_vars, feasible, cvrp_seed)

    # trucks listed by their lowest cluster id; a truck's clusters keep the centroid route order
    truck_clusters = [[k - 1 for k in r] for r in centroid_solution.routes]
    truck_clusters.sort(key=lambda ks: (min(ks) if ks else math.inf))
    seeds = {"fcm": stage.fcm_seed, "sampler": config.sampler.seed, "cvrp": cvrp_seed}
    return _finish(
        instance, config, mm, assignment, truck_clusters, timings, seeds, sampler, t_start,
        elbow=elbow, centroid_solution=centroid_solution, cvrp_stage=[cvrp_stage],
    )


def run(instance: Instance, config: PipelineConfig = PipelineConfig(), sampler=None) -> PipelineReport:
    return (run_h2s if config.strategy == "h2s" else run_h3s)(instance, config, sampler)
