"""CVRP and TSP QUBO models over edge variables ``x[r, i, j]``.

Penalty groups (each ``lambda * (linear expression)**2``):

``visit``     every customer entered exactly once across all trucks
``depot``     every truck leaves the depot once (and returns once, optional)
``flow``      per truck and node, in-degree equals out-degree
``capacity``  per truck, delivered demand + slack == capacity
``subtour``   per truck, Miller-Tucker-Zemlin ordering with binary-coded
              order variables ``u[r, i]`` in ``1..n-1`` and slack

Node 0 is the depot in every routing problem.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .qubo import (
    PenaltyWeights,
    QuboModel,
    VarLabel,
    add_slack_variables,
    add_squared_equality_penalty,
    energy,
    slack_coefficients,
)

DEFAULT_VARIABLE_BUDGET = 20_000
PENALTY_GROUPS = ("visit", "depot", "flow", "capacity", "subtour")


class ModelSizeError(ValueError):
    pass


@dataclass(frozen=True)
class RoutingProblem:
    cost: np.ndarray
    demands: tuple[int, ...]
    truck_count: int = 1
    truck_capacity: int | None = None
    weights: PenaltyWeights | None = None
    depot_return: bool = True

    def __post_init__(self):
        cost = np.asarray(self.cost)
        if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
            raise ValueError("cost must be a square matrix")
        if not np.array_equal(cost, cost.T) or np.any(np.diag(cost) != 0):
            raise ValueError("cost must be symmetric with a zero diagonal")
        if len(self.demands) != cost.shape[0]:
            raise ValueError("one demand per node")
        if self.truck_count < 1:
            raise ValueError("truck_count must be >= 1")
        if self.weights is None:
            object.__setattr__(self, "weights", PenaltyWeights.default_for(cost))

    @property
    def n(self) -> int:
        return int(self.cost.shape[0])

    @property
    def has_capacity(self) -> bool:
        return self.truck_capacity is not None

    def route_cost(self, route: Sequence[int]) -> int:
        stops = [0, *route, 0]
        return int(sum(self.cost[a, b] for a, b in zip(stops, stops[1:]))) if route else 0


@dataclass
class VariableIndex:
    n: int
    trucks: int
    edge: dict[tuple[int, int, int], int] = field(default_factory=dict)
    order: dict[tuple[int, int], list[tuple[int, int]]] = field(default_factory=dict)
    mtz_slack: dict[tuple[int, int, int], list[tuple[int, int]]] = field(default_factory=dict)
    capacity_slack: dict[int, list[tuple[int, int]]] = field(default_factory=dict)
    big_B: int = 0

    @property
    def num_vars(self) -> int:
        return (
            len(self.edge)
            + sum(len(v) for v in self.order.values())
            + sum(len(v) for v in self.mtz_slack.values())
            + sum(len(v) for v in self.capacity_slack.values())
        )


@dataclass
class RoutingModel:
    problem: RoutingProblem
    model: QuboModel
    index: VariableIndex


@dataclass
class RouteSolution:
    routes: list[list[int]]
    total_cost: int
    penalty_breakdown: dict[str, float]
    feasible: bool
    malformations: list[list[str]] = field(default_factory=list)
    stray_arcs: list[list[tuple[int, int]]] = field(default_factory=list)
    repaired: bool = False
    overflow: bool = False
    reason: str | None = None

    def to_json(self) -> dict:
        out = {
            "routes": [list(map(int, r)) for r in self.routes],
            "cost": int(self.total_cost),
            "feasible": bool(self.feasible),
            "penalties": {k: float(v) for k, v in sorted(self.penalty_breakdown.items())},
            "repaired": bool(self.repaired),
            "overflow": bool(self.overflow),
        }
        if any(self.malformations):
            out["malformations"] = self.malformations
        if self.reason:
            out["reason"] = self.reason
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def annealing_schedule(problem: RoutingProblem) -> tuple[float, float]:
    """Geometric beta range for annealing a routing model.

    Starts where breaking one routing constraint is accepted about a third
    of the time and ends where lengthening the tour by a hundredth of the
    longest edge is all but ruled out.
    """
    max_cost = float(max(int(np.max(problem.cost)), 1))
    return 1.0 / problem.weights.lambda_depot, 50.0 / max_cost


def estimate_num_vars(n: int, trucks: int, capacity: int | None, big_B: int | None = None) -> int:
    customers = n - 1
    big_B = n if big_B is None else big_B
    order_bits = len(slack_coefficients(max(customers - 1, 0)))
    mtz_bits = len(slack_coefficients(max(n - 3 + big_B, 0)))
    cap_bits = len(slack_coefficients(capacity)) if capacity is not None else 0
    return trucks * (
        n * (n - 1) + customers * order_bits + customers * (customers - 1) * mtz_bits + cap_bits
    )


def build_cvrp_qubo(problem: RoutingProblem, variable_budget: int = DEFAULT_VARIABLE_BUDGET) -> RoutingModel:
    n, p, w = problem.n, problem.truck_count, problem.weights
    if n < 2:
        raise ValueError("need the depot and at least one customer")
    big_B = int(w.big_B)
    if big_B != w.big_B or big_B < n - 1:
        raise ValueError(f"big_B must be an integer >= n - 1 = {n - 1}")
    estimate = estimate_num_vars(n, p, problem.truck_capacity, big_B)
    if estimate > variable_budget:
        raise ModelSizeError(
            f"{estimate} variables exceeds the budget of {variable_budget}; "
            "decompose with cluster-first routing"
        )
    model = QuboModel()
    index = VariableIndex(n, p, big_B=big_B)
    customers = range(1, n)

    for r in range(p):
        for i in range(n):
            for j in range(n):
                if i != j:
                    index.edge[r, i, j] = model.add_variable(VarLabel("edge", r, i, j))
    order_coeffs = slack_coefficients(n - 2) if n > 2 else []
    for r in range(p):
        for i in customers:
            index.order[r, i] = [
                (model.add_variable(VarLabel("order", r, i, k)), c) for k, c in enumerate(order_coeffs)
            ]
    x = index.edge

    for (r, i, j), v in x.items():
        if problem.cost[i, j]:
            model.add_objective(v, float(problem.cost[i, j]))

    for j in customers:
        add_squared_equality_penalty(
            model, [(x[r, i, j], 1.0) for r in range(p) for i in range(n) if i != j], -1.0, w.lambda_visit, "visit"
        )
    for r in range(p):
        add_squared_equality_penalty(model, [(x[r, 0, j], 1.0) for j in customers], -1.0, w.lambda_depot, "depot")
        if problem.depot_return:
            add_squared_equality_penalty(model, [(x[r, j, 0], 1.0) for j in customers], -1.0, w.lambda_depot, "depot")
    for r in range(p):
        for j in range(n):
            terms = [(x[r, i, j], 1.0) for i in range(n) if i != j]
            terms += [(x[r, j, i], -1.0) for i in range(n) if i != j]
            add_squared_equality_penalty(model, terms, 0.0, w.lambda_flow, "flow")

    if problem.has_capacity:
        Q = int(problem.truck_capacity)
        for r in range(p):
            slack = add_slack_variables(model, Q, "capacity", r)
            index.capacity_slack[r] = slack
            terms = [(x[r, i, j], float(problem.demands[j])) for j in customers for i in range(n) if i != j]
            add_squared_equality_penalty(model, [*terms, *slack], -float(Q), w.lambda_capacity, "capacity")

    # MTZ: u[j] - u[i] - 1 + B (1 - x[i, j]) - s == 0 with s in [0, n - 3 + B];
    # u = 1 + sum(order bits), so the constants cancel to B - 1.
    mtz_upper = n - 3 + big_B
    for r in range(p):
        for i in customers:
            for j in customers:
                if i == j:
                    continue
                slack = add_slack_variables(model, mtz_upper, "subtour", len(index.mtz_slack))
                index.mtz_slack[r, i, j] = slack
                terms = [(v, float(c)) for v, c in index.order[r, j]]
                terms += [(v, -float(c)) for v, c in index.order[r, i]]
                terms.append((x[r, i, j], -float(big_B)))
                terms += [(v, -float(c)) for v, c in slack]
                add_squared_equality_penalty(model, terms, float(big_B - 1), w.lambda_subtour, "subtour")

    model.freeze()
    assert model.num_vars == index.num_vars
    return RoutingModel(problem, model, index)


def build_tsp_qubo(
    points,
    cost: np.ndarray | None = None,
    weights: PenaltyWeights | None = None,
    variable_budget: int = DEFAULT_VARIABLE_BUDGET,
    depot_return: bool = True,
) -> RoutingModel:
    """Single-truck model without the demand constraint; ``points[0]`` anchors the tour."""
    from .instance import cost_matrix

    if cost is None:
        cost = cost_matrix(points)
    cost = np.asarray(cost)
    if cost.shape[0] < 2:
        raise ValueError("a tour needs at least two points")
    problem = RoutingProblem(cost, (0,) * cost.shape[0], 1, None, weights, depot_return)
    return build_cvrp_qubo(problem, variable_budget)


# -- encoding ---------------------------------------------------------------


def _set_value(bits: np.ndarray, pairs: list[tuple[int, int]], value: int) -> None:
    """Greedy binary encoding of ``value`` over ``(var, coeff)`` pairs (trimmed powers of two)."""
    remaining = value
    for var, c in reversed(pairs):
        if c <= remaining:
            bits[var] = 1
            remaining -= c
        else:
            bits[var] = 0
    if remaining:
        raise ValueError(f"value {value} not representable")


def _arcs_from_bits(rm: RoutingModel, bits) -> list[list[tuple[int, int]]]:
    arcs: list[list[tuple[int, int]]] = [[] for _ in range(rm.index.trucks)]
    for (r, i, j), v in rm.index.edge.items():
        if bits[v]:
            arcs[r].append((i, j))
    return arcs


def _order_positions(rm: RoutingModel, arcs: list[list[tuple[int, int]]]) -> list[dict[int, int]]:
    """Position (1-based) of each customer along its truck's depot walk."""
    out = []
    for truck_arcs in arcs:
        succ: dict[int, list[int]] = {}
        for i, j in truck_arcs:
            succ.setdefault(i, []).append(j)
        pos: dict[int, int] = {}
        node, k = 0, 0
        while len(succ.get(node, [])) >= 1:
            nxt = min(succ[node])
            if nxt == 0 or nxt in pos:
                break
            k += 1
            pos[nxt] = k
            node = nxt
        out.append(pos)
    return out


def complete_auxiliaries(rm: RoutingModel, bits) -> np.ndarray:
    """Set order and slack bits to their best values for the given edge bits.

    Edge bits are left untouched, so the decoded routes never change.
    """
    bits = np.array(bits, dtype=np.uint8)
    idx, problem = rm.index, rm.problem
    arcs = _arcs_from_bits(rm, bits)
    positions = _order_positions(rm, arcs)
    n = idx.n
    u: dict[tuple[int, int], int] = {}
    for r in range(idx.trucks):
        # off-walk customers get the largest order so no on-walk arc constrains them
        for i in range(1, n):
            value = positions[r].get(i, n - 1)
            value = min(max(value, 1), n - 1)
            u[r, i] = value
            _set_value(bits, idx.order[r, i], value - 1)
    for (r, i, j), slack in idx.mtz_slack.items():
        e = u[r, j] - u[r, i] - 1 + idx.big_B * (1 - int(bits[idx.edge[r, i, j]]))
        _set_value(bits, slack, min(max(e, 0), sum(c for _, c in slack)))
    for r, slack in idx.capacity_slack.items():
        load = sum(problem.demands[j] for i, j in arcs[r] if j != 0)
        _set_value(bits, slack, min(max(problem.truck_capacity - load, 0), problem.truck_capacity))
    return bits


def encode_routes(rm: RoutingModel, routes: Sequence[Sequence[int]]) -> np.ndarray:
    """Bitstring for per-truck routes (depot implicit), auxiliaries completed."""
    idx = rm.index
    if len(routes) > idx.trucks:
        raise ValueError(f"{len(routes)} routes for {idx.trucks} trucks")
    bits = np.zeros(rm.model.num_vars, dtype=np.uint8)
    for r, route in enumerate(routes):
        if not route:
            continue
        stops = [0, *route, 0]
        for a, b in zip(stops, stops[1:]):
            bits[idx.edge[r, a, b]] = 1
    return complete_auxiliaries(rm, bits)


def encode_arcs(rm: RoutingModel, arcs: Sequence[Sequence[tuple[int, int]]]) -> np.ndarray:
    """Bitstring for arbitrary per-truck arc sets, auxiliaries completed."""
    bits = np.zeros(rm.model.num_vars, dtype=np.uint8)
    for r, truck_arcs in enumerate(arcs):
        for a, b in truck_arcs:
            bits[rm.index.edge[r, a, b]] = 1
    return complete_auxiliaries(rm, bits)


# -- decoding ---------------------------------------------------------------


def _walk(truck_arcs: list[tuple[int, int]]) -> tuple[list[int], list[str], list[tuple[int, int]]]:
    succ: dict[int, list[int]] = {}
    for i, j in truck_arcs:
        succ.setdefault(i, []).append(j)
    problems: list[str] = []
    route: list[int] = []
    used: set[tuple[int, int]] = set()
    if 0 not in succ:
        if truck_arcs:
            problems.append("no depot departure")
    else:
        node = 0
        seen = {0}
        while True:
            nexts = sorted(succ.get(node, []))
            if not nexts:
                problems.append(f"dead end at {node}")
                break
            if len(nexts) > 1:
                problems.append(f"branch at {node}")
            nxt = nexts[0]
            used.add((node, nxt))
            if nxt == 0:
                break
            if nxt in seen:
                problems.append(f"cycle without depot at {nxt}")
                break
            seen.add(nxt)
            route.append(nxt)
            node = nxt
    stray = sorted(a for a in truck_arcs if a not in used)
    if stray:
        problems.append("subtour or stray arcs: " + " ".join(f"{i}->{j}" for i, j in stray))
    return route, problems, stray


def decode(rm: RoutingModel, bits) -> RouteSolution:
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    if bits.shape[0] != rm.model.num_vars:
        raise ValueError(f"expected {rm.model.num_vars} bits, got {bits.shape[0]}")
    arcs = _arcs_from_bits(rm, bits)
    routes, malformed, strays = [], [], []
    for truck_arcs in arcs:
        route, problems, stray = _walk(truck_arcs)
        routes.append(route)
        malformed.append(problems)
        strays.append(stray)
    penalties = {g: 0.0 for g in PENALTY_GROUPS}
    penalties.update(rm.model.penalty_breakdown(bits))
    if not rm.problem.has_capacity:
        penalties.pop("capacity", None)
    cost = sum(rm.problem.route_cost(r) for r in routes)
    feasible = all(v == 0 for v in penalties.values()) and not any(malformed)
    return RouteSolution(routes, cost, penalties, feasible, malformed, strays)


def evaluate_routes(rm: RoutingModel, routes: Sequence[Sequence[int]], **flags) -> RouteSolution:
    """Decode of the canonical encoding of ``routes``."""
    sol = decode(rm, encode_routes(rm, routes))
    return replace(sol, **flags) if flags else sol


def greedy_repair(solution: RouteSolution, rm: RoutingModel) -> RouteSolution:
    """Drop duplicate visits and insert unvisited customers at their cheapest feasible slot."""
    if solution.feasible:
        return solution
    problem = rm.problem
    cost, demand = problem.cost, problem.demands
    routes = [list(r) for r in solution.routes]
    routes += [[] for _ in range(rm.index.trucks - len(routes))]

    def removal_saving(route, k):
        prev = route[k - 1] if k > 0 else 0
        nxt = route[k + 1] if k + 1 < len(route) else 0
        return cost[prev, route[k]] + cost[route[k], nxt] - cost[prev, nxt]

    while True:
        where: dict[int, list[tuple[int, int]]] = {}
        for r, route in enumerate(routes):
            for k, c in enumerate(route):
                where.setdefault(c, []).append((r, k))
        dup = next((c for c in sorted(where) if len(where[c]) > 1), None)
        if dup is None:
            break
        # keep the cheaper visit: drop the one whose removal saves the most
        r, k = max(where[dup], key=lambda rk: (removal_saving(routes[rk[0]], rk[1]), -rk[0], -rk[1]))
        del routes[r][k]

    visited = {c for route in routes for c in route}
    missing = [c for c in range(1, problem.n) if c not in visited]
    cap = problem.truck_capacity if problem.has_capacity else None
    for c in sorted(missing, key=lambda c: -demand[c]):
        best = None
        for r, route in enumerate(routes):
            if cap is not None and sum(demand[v] for v in route) + demand[c] > cap:
                continue
            stops = [0, *route, 0]
            for k in range(len(stops) - 1):
                delta = cost[stops[k], c] + cost[c, stops[k + 1]] - cost[stops[k], stops[k + 1]]
                if best is None or delta < best[0]:
                    best = (delta, r, k)
        if best is None:
            return replace(solution, reason="capacity")
        _, r, k = best
        routes[r].insert(k, c)

    repaired = evaluate_routes(rm, routes, repaired=True, overflow=solution.overflow)
    if not repaired.feasible:
        reason = "fleet" if any(not r for r in routes) else "infeasible after repair"
        return replace(solution, reason=reason)
    return repaired
