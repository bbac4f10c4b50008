"""VRPLib/TSPLIB CVRP instance parsing and the distance metric."""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DATA_DIR_ENV = "HYBRIDVRP_DATA"
_PACKAGE_DATA = Path(__file__).resolve().parent / "data"

_REQUIRED_SECTIONS = ("NODE_COORD_SECTION", "DEMAND_SECTION", "DEPOT_SECTION")
_REQUIRED_KEYS = ("NAME", "DIMENSION", "CAPACITY", "EDGE_WEIGHT_TYPE")


class ParseError(ValueError):
    """Malformed VRPLib text."""


class InstanceValidationError(ValueError):
    """Well-formed file describing an impossible instance."""


@dataclass(frozen=True)
class Node:
    id: int
    x: float
    y: float
    demand: int = 0

    @property
    def point(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class Instance:
    name: str
    nodes: tuple[Node, ...]
    truck_count: int
    truck_capacity: int
    edge_weight_kind: str = "EUC_2D"

    def __post_init__(self):
        if not self.nodes:
            raise InstanceValidationError("instance has no nodes")
        for k, node in enumerate(self.nodes):
            if node.id != k:
                raise InstanceValidationError(f"node ids must be contiguous 0..n-1, got {node.id} at {k}")
            if node.demand < 0:
                raise InstanceValidationError(f"node {k} has negative demand")
        if self.nodes[0].demand != 0:
            raise InstanceValidationError(f"depot has nonzero demand {self.nodes[0].demand}")
        if self.truck_count < 1:
            raise InstanceValidationError("truck_count must be >= 1")
        if self.truck_capacity < 1:
            raise InstanceValidationError("truck_capacity must be >= 1")
        demand = sum(node.demand for node in self.nodes)
        if demand > self.truck_count * self.truck_capacity:
            raise InstanceValidationError(
                f"total demand {demand} exceeds fleet capacity {self.truck_count} x {self.truck_capacity}"
            )
        biggest = max(node.demand for node in self.nodes)
        if biggest > self.truck_capacity:
            raise InstanceValidationError(f"a demand of {biggest} does not fit in one truck ({self.truck_capacity})")

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def depot(self) -> Node:
        return self.nodes[0]

    @property
    def customers(self) -> tuple[Node, ...]:
        return self.nodes[1:]

    @property
    def demands(self) -> np.ndarray:
        return np.array([node.demand for node in self.nodes], dtype=np.int64)

    @property
    def coords(self) -> np.ndarray:
        return np.array([node.point for node in self.nodes], dtype=float)

    @property
    def total_demand(self) -> int:
        return sum(node.demand for node in self.nodes)

    @property
    def max_demand(self) -> int:
        return max(node.demand for node in self.nodes)

    def cost_matrix(self) -> np.ndarray:
        return cost_matrix([node.point for node in self.nodes])

    def route_cost(self, route: Sequence[int]) -> int:
        """Cost of a depot-anchored closed loop through ``route``."""
        if not route:
            return 0
        stops = [0, *route, 0]
        return sum(distance(self.nodes[a], self.nodes[b]) for a, b in zip(stops, stops[1:]))


def _xy(p) -> tuple[float, float]:
    if isinstance(p, Node):
        return p.x, p.y
    return float(p[0]), float(p[1])


def fractional_distance(a, b) -> float:
    ax, ay = _xy(a)
    bx, by = _xy(b)
    return math.hypot(bx - ax, by - ay)


def distance(a, b) -> int:
    """TSPLIB EUC_2D distance: Euclidean length rounded to the nearest integer."""
    return int(math.floor(fractional_distance(a, b) + 0.5))


def cost_matrix(points: Iterable) -> np.ndarray:
    pts = np.array([_xy(p) for p in points], dtype=float).reshape(-1, 2)
    diff = pts[:, None, :] - pts[None, :, :]
    return np.floor(np.sqrt((diff**2).sum(-1)) + 0.5).astype(np.int64)


_NUMBER = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")


def _num(token: str, lineno: int, what: str) -> float:
    if not _NUMBER.match(token):
        raise ParseError(f"line {lineno}: non-numeric {what} {token!r}")
    return float(token)


def _int(token: str, lineno: int, what: str) -> int:
    value = _num(token, lineno, what)
    if value != int(value):
        raise ParseError(f"line {lineno}: expected integer {what}, got {token!r}")
    return int(value)


def parse_instance(text: str, truck_count: int | None = None) -> Instance:
    """Parse VRPLib CVRP text.

    ``truck_count`` overrides the fleet size; otherwise it is taken from a
    ``-kN`` suffix of NAME, then from a "No of trucks" COMMENT.
    """
    keys: dict[str, str] = {}
    sections: dict[str, list[tuple[int, list[str]]]] = {}
    current = None
    saw_eof = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        head = line.split()[0].rstrip(":")
        if head == "EOF":
            saw_eof = True
            break
        if head.endswith("_SECTION"):
            current = head
            sections[current] = []
            continue
        if ":" in line and not _NUMBER.match(line.split()[0]):
            key, _, value = line.partition(":")
            keys[key.strip().upper()] = value.strip()
            current = None
            continue
        if current is None:
            raise ParseError(f"line {lineno}: unexpected content {line!r}")
        sections[current].append((lineno, line.split()))

    for key in _REQUIRED_KEYS:
        if key not in keys:
            raise ParseError(f"missing {key}")
    for section in _REQUIRED_SECTIONS:
        if section not in sections:
            raise ParseError(f"missing {section}")
    if not saw_eof:
        raise ParseError("missing EOF")

    kind = keys["EDGE_WEIGHT_TYPE"].upper()
    if kind != "EUC_2D":
        raise ParseError(f"unsupported EDGE_WEIGHT_TYPE {kind}")
    dimension = _int(keys["DIMENSION"], 0, "DIMENSION")
    capacity = _int(keys["CAPACITY"], 0, "CAPACITY")
    name = keys["NAME"]

    coords: dict[int, tuple[float, float]] = {}
    for lineno, parts in sections["NODE_COORD_SECTION"]:
        if len(parts) != 3:
            raise ParseError(f"line {lineno}: expected 'id x y' in NODE_COORD_SECTION")
        coords[_int(parts[0], lineno, "node id")] = (
            _num(parts[1], lineno, "x coordinate"),
            _num(parts[2], lineno, "y coordinate"),
        )
    demands: dict[int, int] = {}
    for lineno, parts in sections["DEMAND_SECTION"]:
        if len(parts) != 2:
            raise ParseError(f"line {lineno}: expected 'id demand' in DEMAND_SECTION")
        demands[_int(parts[0], lineno, "node id")] = _int(parts[1], lineno, "demand")
    depots = []
    for lineno, parts in sections["DEPOT_SECTION"]:
        for tok in parts:
            value = _int(tok, lineno, "depot id")
            if value == -1:
                break
            depots.append(value)

    file_ids = list(range(1, dimension + 1))
    if sorted(coords) != file_ids:
        raise ParseError(f"NODE_COORD_SECTION ids do not cover 1..{dimension}")
    if sorted(demands) != file_ids:
        raise ParseError(f"DEMAND_SECTION ids do not cover 1..{dimension}")
    if len(depots) != 1:
        raise ParseError(f"expected exactly one depot, got {len(depots)}")
    depot = depots[0]
    if depot not in coords:
        raise ParseError(f"depot id {depot} is not a node")

    order = [depot] + [i for i in file_ids if i != depot]
    nodes = tuple(
        Node(k, coords[fid][0], coords[fid][1], demands[fid]) for k, fid in enumerate(order)
    )

    if truck_count is None:
        truck_count = _truck_count_from_header(name, keys.get("COMMENT", ""))
    if truck_count is None:
        raise ParseError("truck count not found in NAME (-kN) or COMMENT; pass it explicitly")
    return Instance(name, nodes, truck_count, capacity, kind)


def _truck_count_from_header(name: str, comment: str) -> int | None:
    m = re.search(r"-k(\d+)\b", name)
    if m:
        return int(m.group(1))
    m = re.search(r"No of trucks\s*:?\s*(\d+)", comment, re.IGNORECASE)
    if m:
        return int(m.group(1))
    return None


def serialize_instance(instance: Instance) -> str:
    """Inverse of :func:`parse_instance` (1-based ids, depot written first)."""

    def fmt(v: float) -> str:
        return str(int(v)) if float(v).is_integer() else repr(float(v))

    lines = [
        f"NAME : {instance.name}",
        f"COMMENT : (No of trucks: {instance.truck_count})",
        "TYPE : CVRP",
        f"DIMENSION : {instance.n}",
        f"EDGE_WEIGHT_TYPE : {instance.edge_weight_kind}",
        f"CAPACITY : {instance.truck_capacity}",
        "NODE_COORD_SECTION",
    ]
    lines += [f" {node.id + 1} {fmt(node.x)} {fmt(node.y)}" for node in instance.nodes]
    lines.append("DEMAND_SECTION")
    lines += [f"{node.id + 1} {node.demand}" for node in instance.nodes]
    lines += ["DEPOT_SECTION", " 1", " -1", "EOF", ""]
    return "\n".join(lines)


def data_dir() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, _PACKAGE_DATA))


def load_instance(path: str | os.PathLike, truck_count: int | None = None) -> Instance:
    """Load an instance from a path, or by bare name from the data directory."""
    p = Path(path)
    if not p.exists() and not p.suffix:
        for candidate in (data_dir() / f"{p.name}.vrp", _PACKAGE_DATA / f"{p.name}.vrp"):
            if candidate.exists():
                p = candidate
                break
    return parse_instance(p.read_text(), truck_count=truck_count)


def scan_instances(directory: str | os.PathLike) -> list[Instance]:
    return [load_instance(p) for p in sorted(Path(directory).glob("*.vrp"))]


def make_instance(
    points: Sequence[tuple[float, float]],
    demands: Sequence[int],
    truck_count: int,
    truck_capacity: int,
    name: str = "synthetic",
) -> Instance:
    """Build an instance in memory; ``points[0]`` is the depot."""
    nodes = tuple(Node(k, float(x), float(y), int(d)) for k, ((x, y), d) in enumerate(zip(points, demands)))
    return Instance(name, nodes, truck_count, truck_capacity)
