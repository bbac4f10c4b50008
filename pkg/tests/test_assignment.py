import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybridvrp.assignment import assign, cluster_capacity


@pytest.mark.parametrize("args,cap", [((100, 10, 5), 50), ((100, 5, 5), 100), ((120, 15, 5), 40)])
def test_cluster_capacity(args, cap):
    assert cluster_capacity(*args) == cap


def test_cluster_capacity_rounds_down_and_rejects_non_multiples():
    assert cluster_capacity(100, 15, 5) == 33
    with pytest.raises(ValueError):
        cluster_capacity(100, 7, 5)


def test_contention_trace():
    gamma = np.array([[0.9, 0.1], [0.6, 0.4]])
    res = assign(gamma, [5, 5], [5, 5])
    assert res.cluster_of == {1: 0, 2: 1}
    # round 1: both nominate cluster 0, customer 1 wins on membership
    assert res.rounds[0] == [(1, 0, True), (2, 0, False)]
    assert res.rounds[1] == [(2, 1, True)]
    assert not res.overflow


def test_single_customer():
    res = assign(np.array([[1.0]]), [3], [10])
    assert res.cluster_of == {1: 0}
    assert res.clusters[0].aggregate_demand == 3


def test_no_contention_gives_argmax():
    gamma = np.array([[0.7, 0.2, 0.1], [0.1, 0.8, 0.1], [0.2, 0.2, 0.6], [0.5, 0.3, 0.2]])
    res = assign(gamma, [1, 2, 3, 4], 100)
    assert res.cluster_of == {1: 0, 2: 1, 3: 2, 4: 0}


def test_stops_at_first_misfit():
    # cluster 0 admits 1 (demand 4), then 2 (demand 5) does not fit; 3 (demand 1)
    # would fit but is behind 2 in the queue and must wait for the next round
    gamma = np.array([[0.9, 0.1], [0.8, 0.2], [0.7, 0.3]])
    res = assign(gamma, [4, 5, 1], [6, 10])
    assert res.rounds[0] == [(1, 0, True), (2, 0, False), (3, 0, False)]
    assert res.cluster_of == {1: 0, 2: 1, 3: 1}


def test_overflow_fallback():
    gamma = np.array([[0.6, 0.4], [0.5, 0.5], [0.3, 0.7]])
    res = assign(gamma, [4, 4, 4], [5, 6])
    assert res.overflow and res.overflowed == [2]
    assert len(res.cluster_of) == 3
    assert res.cluster_of[2] == 1  # most residual room


def test_centroids_from_members():
    gamma = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    res = assign(gamma, [1, 1, 1], 10, coords=[[0, 0], [2, 2], [5, 5]])
    assert res.clusters[0].centroid == (1.0, 1.0)
    assert res.clusters[1].centroid == (5.0, 5.0)
    doc = json.loads(res.dumps())
    assert doc["cluster_of"] == {"1": 0, "2": 0, "3": 1}


def _replay_preferences(gamma, res):
    """Every cluster a customer ranks above its own must have refused it earlier."""
    refused = {(cust, j) for rnd in res.rounds for cust, j, ok in rnd if not ok}
    for rnd in res.rounds:
        for cust, j, ok in rnd:
            if ok:
                k = cust - 1
                better = [i for i in range(gamma.shape[1]) if (gamma[k, i], -i) > (gamma[k, j], -j)]
                assert all((cust, i) in refused for i in better)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(1, 4), st.integers(0, 10_000))
def test_assignment_properties(n, c, seed):
    rng = np.random.default_rng(seed)
    gamma = rng.random((n, c))
    gamma /= gamma.sum(axis=1, keepdims=True)
    demands = rng.integers(1, 10, n).tolist()
    cap = int(rng.integers(5, 40))
    res = assign(gamma, demands, cap)
    assert sorted(res.cluster_of) == list(range(1, n + 1))
    assert sum(cl.aggregate_demand for cl in res.clusters) == sum(demands)
    if not res.overflow:
        assert all(cl.aggregate_demand <= cl.capacity for cl in res.clusters)
    # each round drops one preference per rejected customer, so at most c rounds
    assert len(res.rounds) <= c
    _replay_preferences(gamma, res)
