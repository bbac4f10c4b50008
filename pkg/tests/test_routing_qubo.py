import itertools
import json

import numpy as np
import pytest

from hybridvrp.instance import cost_matrix
from hybridvrp.qubo import energy
from hybridvrp.routing_qubo import (
    ModelSizeError,
    RoutingProblem,
    build_cvrp_qubo,
    build_tsp_qubo,
    complete_auxiliaries,
    decode,
    encode_arcs,
    encode_routes,
    estimate_num_vars,
    evaluate_routes,
    greedy_repair,
)
from hybridvrp.sampler import exact_minimum, exhaustive


def brute_tsp(cost) -> int:
    n = len(cost)
    best = None
    for perm in itertools.permutations(range(1, n)):
        stops = (0, *perm, 0)
        c = sum(cost[a, b] for a, b in zip(stops, stops[1:]))
        best = c if best is None else min(best, c)
    return int(best)


def random_problem(rng, n, p, capacity=True):
    pts = rng.integers(0, 50, (n, 2))
    demands = (0, *rng.integers(1, 6, n - 1).tolist())
    cap = max(max(demands), -(-sum(demands) // p) + int(rng.integers(0, 4))) if capacity else None
    return RoutingProblem(cost_matrix(pts), demands, p, cap)


def random_partition(rng, customers, p):
    routes = [[] for _ in range(p)]
    for c in rng.permutation(customers):
        routes[int(rng.integers(p))].append(int(c))
    return routes


def test_variable_count():
    rm = build_cvrp_qubo(RoutingProblem(cost_matrix([(0, 0), (1, 0), (0, 1), (1, 1)]), (0, 1, 1, 1), 2, 3))
    assert rm.model.num_vars == rm.index.num_vars == estimate_num_vars(4, 2, 3)
    assert len(rm.index.edge) == 2 * 4 * 3
    assert len(set(rm.index.edge.values())) == len(rm.index.edge)


def test_size_error():
    with pytest.raises(ModelSizeError, match="cluster-first"):
        build_tsp_qubo([(i, 0) for i in range(30)], variable_budget=1000)


def test_three_nodes_exhaustive():
    pts = [(0, 0), (3, 0), (0, 4)]
    rm = build_tsp_qubo(pts)
    assert rm.model.num_vars <= 26
    ss = exhaustive(rm.model)
    bits, e = ss.best
    sol = decode(rm, bits)
    assert sol.feasible and sol.routes[0] in ([1, 2], [2, 1])
    assert e == sol.total_cost == 12


def test_three_nodes_cvrp_exact():
    problem = RoutingProblem(cost_matrix([(0, 0), (3, 0), (0, 4)]), (0, 2, 3), 1, 5)
    rm = build_cvrp_qubo(problem)
    res = exact_minimum(rm.model)
    sol = decode(rm, complete_auxiliaries(rm, res.state))
    assert sol.feasible and sol.total_cost == 12 and res.energy == 12


def test_unit_square_perimeter():
    rm = build_tsp_qubo([(0, 0), (10, 0), (10, 10), (0, 10)])
    sol = decode(rm, exact_minimum(rm.model).state)
    assert sol.feasible and sol.total_cost == 40
    assert sol.routes[0] in ([1, 2, 3], [3, 2, 1])


def test_two_points():
    rm = build_tsp_qubo([(0, 0), (3, 4)])
    sol = decode(rm, exact_minimum(rm.model).state)
    assert sol.routes == [[1]] and sol.total_cost == 10


def test_collinear_three():
    rm = build_tsp_qubo([(0, 0), (1, 0), (2, 0)])
    res = exact_minimum(rm.model)
    assert res.energy == 4 and decode(rm, res.state).total_cost == 4


def test_decode_round_trip():
    rm = build_tsp_qubo([(0, 0), (3, 0), (0, 4)])
    sol = decode(rm, encode_routes(rm, [[2, 1]]))
    assert sol.routes == [[2, 1]] and sol.feasible
    assert json.loads(sol.dumps())["routes"] == [[2, 1]]


def test_all_zero_bits():
    rm = build_tsp_qubo([(0, 0), (3, 0), (0, 4)])
    sol = decode(rm, np.zeros(rm.model.num_vars, dtype=np.uint8))
    assert sol.routes == [[]] and not sol.feasible
    assert sol.penalty_breakdown["depot"] > 0


def test_detached_two_cycle():
    rm = build_tsp_qubo([(0, 0), (3, 0), (0, 4), (5, 5)])
    bits = encode_arcs(rm, [[(0, 3), (3, 0), (1, 2), (2, 1)]])
    sol = decode(rm, bits)
    assert not sol.feasible
    assert sol.penalty_breakdown["flow"] == 0 and sol.penalty_breakdown["visit"] == 0
    assert sol.penalty_breakdown["subtour"] > 0
    assert any("subtour" in m for m in sol.malformations[0])
    assert sol.stray_arcs[0] == [(1, 2), (2, 1)]


def test_capacity_violation():
    problem = RoutingProblem(cost_matrix([(0, 0), (1, 0), (0, 1)]), (0, 3, 3), 1, 5)
    sol = evaluate_routes(build_cvrp_qubo(problem), [[1, 2]])
    assert not sol.feasible
    assert sol.penalty_breakdown["capacity"] > 0
    assert all(v == 0 for k, v in sol.penalty_breakdown.items() if k != "capacity")


def test_depot_return_flag():
    problem = RoutingProblem(cost_matrix([(0, 0), (1, 0)]), (0, 0), depot_return=False)
    rm = build_cvrp_qubo(problem)
    assert sum(1 for sq in rm.model.squares if sq.group == "depot") == 1


def test_repair_leaves_feasible_alone():
    rm = build_tsp_qubo([(0, 0), (3, 0), (0, 4)])
    sol = evaluate_routes(rm, [[1, 2]])
    assert greedy_repair(sol, rm) is sol


def test_repair_inserts_at_cheapest_slot():
    pts = [(0, 0), (10, 0), (10, 10), (0, 10), (5, 11)]
    problem = RoutingProblem(cost_matrix(pts), (0, 1, 1, 1, 1), 1, 10)
    rm = build_cvrp_qubo(problem)
    broken = evaluate_routes(rm, [[1, 2, 3]])
    assert not broken.feasible
    fixed = greedy_repair(broken, rm)
    assert fixed.feasible and fixed.repaired
    options = [[1, 2, 3][:k] + [4] + [1, 2, 3][k:] for k in range(4)]
    assert fixed.total_cost == min(problem.route_cost(r) for r in options)


def test_repair_drops_duplicate():
    pts = [(0, 0), (10, 0), (10, 10), (0, 10)]
    rm = build_tsp_qubo(pts)
    fixed = greedy_repair(evaluate_routes(rm, [[1, 2, 1, 3]]), rm)
    assert fixed.feasible and sorted(fixed.routes[0]) == [1, 2, 3]
    assert fixed.total_cost == 40


def test_repair_without_room():
    problem = RoutingProblem(cost_matrix([(0, 0), (1, 0), (0, 1), (1, 1)]), (0, 3, 3, 3), 2, 3)
    rm = build_cvrp_qubo(problem)
    out = greedy_repair(evaluate_routes(rm, [[1], [2]]), rm)
    assert out.reason == "capacity" and not out.feasible


@pytest.mark.parametrize("seed", range(6))
def test_small_cvrp_oracle(seed):
    rng = np.random.default_rng(seed)
    n, p = int(rng.integers(3, 6)), int(rng.integers(1, 3))
    problem = random_problem(rng, n, p)
    rm = build_cvrp_qubo(problem)
    res = exact_minimum(rm.model)
    sol = decode(rm, complete_auxiliaries(rm, res.state))
    assert sol.feasible and sol.total_cost == pytest.approx(res.energy)
    # brute force over all assignments of customers to ordered routes
    best = None
    for labels in itertools.product(range(p), repeat=n - 1):
        groups = [[c for c, l in zip(range(1, n), labels) if l == r] for r in range(p)]
        if any(sum(problem.demands[c] for c in g) > problem.truck_capacity for g in groups):
            continue
        if any(not g for g in groups):
            continue
        total = 0
        for g in groups:
            total += min(problem.route_cost(list(perm)) for perm in itertools.permutations(g))
        best = total if best is None else min(best, total)
    assert sol.total_cost == best


@pytest.mark.parametrize("seed", range(5))
def test_tsp_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    pts = rng.integers(0, 100, (int(rng.integers(3, 8)), 2))
    rm = build_tsp_qubo(pts)
    res = exact_minimum(rm.model)
    assert decode(rm, res.state).total_cost == brute_tsp(rm.problem.cost) == pytest.approx(res.energy)


def test_zero_penalty_and_energy_cost():
    rng = np.random.default_rng(9)
    for _ in range(150):
        n, p = int(rng.integers(2, 7)), int(rng.integers(1, 3))
        problem = random_problem(rng, n, p, capacity=bool(rng.integers(2)))
        rm = build_cvrp_qubo(problem)
        routes = random_partition(rng, range(1, n), p)
        bits = encode_routes(rm, routes)
        sol = decode(rm, bits)
        loads_ok = not problem.has_capacity or all(
            sum(problem.demands[c] for c in r) <= problem.truck_capacity for r in routes
        )
        all_used = all(routes)
        assert sol.feasible == (loads_ok and all_used)
        if sol.feasible:
            assert energy(rm.model, bits) == pytest.approx(sol.total_cost, abs=1e-6)
            rev = evaluate_routes(rm, [r[::-1] for r in routes])
            assert rev.feasible and rev.total_cost == sol.total_cost


def test_corruptions_are_penalized():
    rng = np.random.default_rng(10)
    for _ in range(150):
        n = int(rng.integers(3, 7))
        problem = random_problem(rng, n, 1)
        rm = build_cvrp_qubo(problem)
        bits = encode_routes(rm, [list(map(int, rng.permutation(range(1, n))))])
        edges = list(rm.index.edge.values())
        for v in rng.choice(edges, int(rng.integers(1, 3)), replace=False):
            bits[v] ^= 1
        sol = decode(rm, complete_auxiliaries(rm, bits))
        assert not sol.feasible
        assert sum(sol.penalty_breakdown.values()) > 0
