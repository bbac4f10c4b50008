import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hybridvrp.instance import (
    InstanceValidationError,
    Node,
    ParseError,
    cost_matrix,
    data_dir,
    distance,
    fractional_distance,
    load_instance,
    make_instance,
    parse_instance,
    scan_instances,
    serialize_instance,
)

from conftest import PAPER_INSTANCES

TINY = """NAME : tiny
COMMENT : (No of trucks: 1)
TYPE : CVRP
DIMENSION : 2
EDGE_WEIGHT_TYPE : EUC_2D
CAPACITY : 10
NODE_COORD_SECTION
 1 0 0
 2 3 4
DEMAND_SECTION
1 0
2 1
DEPOT_SECTION
 1
 -1
EOF
"""


def test_a32_header(a32):
    assert (a32.n, a32.truck_count, a32.truck_capacity) == (32, 5, 100)
    assert a32.depot.demand == 0
    assert a32.total_demand == 410


def test_minimal_file():
    inst = parse_instance(TINY)
    assert inst.n == 2
    assert inst.truck_count == 1
    assert inst.nodes[1] == Node(1, 3.0, 4.0, 1)


def test_missing_demand_section_is_named():
    text = TINY.replace("DEMAND_SECTION\n1 0\n2 1\n", "")
    with pytest.raises(ParseError, match="DEMAND_SECTION"):
        parse_instance(text)


def test_non_numeric_field_reports_line():
    text = TINY.replace(" 2 3 4", " 2 3 abc")
    with pytest.raises(ParseError, match="line 9"):
        parse_instance(text)


def test_depot_with_demand_rejected():
    text = TINY.replace("1 0\n2 1", "1 2\n2 1")
    with pytest.raises(InstanceValidationError):
        parse_instance(text)


def test_truck_count_sources():
    assert parse_instance(TINY.replace("NAME : tiny", "NAME : tiny-k3")).truck_count == 3
    assert parse_instance(TINY, truck_count=4).truck_count == 4
    with pytest.raises(ParseError, match="truck count"):
        parse_instance(TINY.replace("COMMENT : (No of trucks: 1)\n", ""))


def test_depot_reindexed_to_zero():
    text = TINY.replace("DEPOT_SECTION\n 1", "DEPOT_SECTION\n 2").replace("1 0\n2 1", "1 1\n2 0")
    inst = parse_instance(text)
    assert inst.nodes[0].point == (3.0, 4.0)
    assert inst.nodes[1].point == (0.0, 0.0)


@pytest.mark.parametrize("a,b,d", [((0, 0), (3, 4), 5), ((1, 1), (1, 1), 0), ((0, 0), (1, 1), 1)])
def test_distance_examples(a, b, d):
    assert distance(a, b) == d


@pytest.mark.parametrize("a,b,d", [((0, 0), (3, 4), 5.0), ((0, 0), (1, 0), 1.0), ((0, 0), (1, 1), math.sqrt(2))])
def test_fractional_distance_examples(a, b, d):
    assert fractional_distance(a, b) == pytest.approx(d, abs=1e-12)


coord = st.integers(-1000, 1000)
point = st.tuples(coord, coord)


@given(point, point, point)
def test_distance_symmetry_and_triangle(a, b, c):
    assert distance(a, b) == distance(b, a)
    assert fractional_distance(a, c) <= fractional_distance(a, b) + fractional_distance(b, c) + 1e-9


def test_cost_matrix_matches_scalar(a32):
    C = a32.cost_matrix()
    for i in range(0, a32.n, 5):
        for j in range(a32.n):
            assert C[i, j] == distance(a32.nodes[i], a32.nodes[j])
    assert np.array_equal(C, C.T)


@pytest.mark.parametrize("name", [*PAPER_INSTANCES, "A-n33-k6"])
def test_round_trip(name):
    inst = load_instance(name)
    again = parse_instance(serialize_instance(inst))
    assert again == inst


def test_scan_and_data_dir(monkeypatch, tmp_path):
    (tmp_path / "tiny-k1.vrp").write_text(TINY)
    monkeypatch.setenv("HYBRIDVRP_DATA", str(tmp_path))
    assert data_dir() == tmp_path
    assert [i.name for i in scan_instances(tmp_path)] == ["tiny"]
    assert load_instance("tiny-k1").n == 2


def test_route_cost_and_make_instance():
    inst = make_instance([(0, 0), (3, 4), (6, 8)], [0, 1, 1], 1, 5)
    assert inst.route_cost([1, 2]) == 5 + 5 + 10
    assert inst.route_cost([]) == 0
    assert cost_matrix([(0, 0), (3, 4)]).tolist() == [[0, 5], [5, 0]]


def test_fleet_invariants():
    with pytest.raises(InstanceValidationError, match="fleet capacity"):
        make_instance([(0, 0), (1, 1), (2, 2)], [0, 5, 6], 1, 10)
    with pytest.raises(InstanceValidationError, match="one truck"):
        make_instance([(0, 0), (1, 1)], [0, 11], 2, 10)
