"""QUBO container, penalty assembly and energy evaluation.

A model stores an upper-triangular quadratic form: ``quadratic[(i, j)]`` with
``i < j``, diagonal terms folded into ``linear`` (``x*x == x`` for binary x),
plus a constant ``offset`` so that reported energies are true values and a
fully satisfied penalty contributes exactly zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np


class VarLabel(NamedTuple):
    """Structured variable label.

    ``kind`` is one of ``edge`` (truck, i, j), ``order`` (truck, node, bit)
    or ``slack`` (group, index, bit) where ``group`` names the constraint.
    """

    kind: str
    a: int | str
    b: int
    c: int

    def __str__(self) -> str:
        return f"{self.kind} {self.a} {self.b} {self.c}"


ANNEAL_VISIT_FACTOR = 2.0
ANNEAL_CAPACITY_FACTOR = 4.0


@dataclass(frozen=True)
class PenaltyWeights:
    lambda_visit: float
    lambda_depot: float
    lambda_flow: float
    lambda_capacity: float
    lambda_subtour: float
    big_B: float

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not value > 0:
                raise ValueError(f"{name} must be strictly positive, got {value}")

    @classmethod
    def default_for(cls, cost: np.ndarray) -> "PenaltyWeights":
        """2 x (max edge cost) x n for every lambda, big_B = n."""
        n = int(cost.shape[0])
        lam = float(2 * max(int(np.max(cost)), 1) * n)
        return cls(lam, lam, lam, lam, lam, float(n))

    @classmethod
    def annealing_for(cls, cost: np.ndarray, demands=None) -> "PenaltyWeights":
        """Weights tuned for single-flip annealing rather than for the exact ground state.

        The uniform ``2 * max_cost * n`` weights make every edge flip so
        expensive that order and slack bits freeze long before the tour
        does. Here the routing constraints sit at a small multiple of the
        largest edge cost, the ordering constraint is scaled down by ``n**2``
        (its squares grow with ``big_B**2``) and the capacity constraint by
        the squared largest demand.
        """
        n = int(cost.shape[0])
        base = float(2 * max(int(np.max(cost)), 1))
        d_max = max((int(d) for d in demands), default=0) if demands is not None else 0
        capacity = ANNEAL_CAPACITY_FACTOR * base / max(d_max, 1) ** 2
        return cls(ANNEAL_VISIT_FACTOR * base, base, base, capacity, base / n**2, float(n))


class SquaredTerm(NamedTuple):
    """``weight * (sum(coeff * x) + constant)**2`` tagged with its constraint group."""

    group: str
    terms: tuple[tuple[int, float], ...]
    constant: float
    weight: float

    def value(self, x: np.ndarray) -> float:
        s = self.constant + sum(c * x[v] for v, c in self.terms)
        return self.weight * s * s


@dataclass
class QuboModel:
    linear: dict[int, float] = field(default_factory=dict)
    quadratic: dict[tuple[int, int], float] = field(default_factory=dict)
    offset: float = 0.0
    labels: list[VarLabel] = field(default_factory=list)
    frozen: bool = False
    # Construction record: linear objective plus squared penalties. Kept only
    # while every coefficient came through add_objective/add_squared_equality_penalty.
    objective: dict[int, float] = field(default_factory=dict)
    squares: list[SquaredTerm] = field(default_factory=list)
    structured: bool = True

    @property
    def num_vars(self) -> int:
        return len(self.labels)

    def _check_mutable(self):
        if self.frozen:
            raise RuntimeError("model is frozen")

    def add_variable(self, label: VarLabel) -> int:
        self._check_mutable()
        self.labels.append(label)
        return len(self.labels) - 1

    def add_linear(self, i: int, coeff: float) -> None:
        self.structured = False
        self._add_linear(i, coeff)

    def add_quadratic(self, i: int, j: int, coeff: float) -> None:
        self.structured = False
        self._add_quadratic(i, j, coeff)

    def _add_linear(self, i: int, coeff: float) -> None:
        self._check_mutable()
        if not 0 <= i < self.num_vars:
            raise IndexError(f"variable {i} out of range")
        self.linear[i] = self.linear.get(i, 0.0) + coeff

    def _add_quadratic(self, i: int, j: int, coeff: float) -> None:
        if i == j:
            self._add_linear(i, coeff)
            return
        self._check_mutable()
        if not (0 <= i < self.num_vars and 0 <= j < self.num_vars):
            raise IndexError(f"pair ({i}, {j}) out of range")
        key = (i, j) if i < j else (j, i)
        self.quadratic[key] = self.quadratic.get(key, 0.0) + coeff

    def add_objective(self, i: int, coeff: float) -> None:
        """Linear objective term that is tracked separately from penalties."""
        self._add_linear(i, coeff)
        self.objective[i] = self.objective.get(i, 0.0) + coeff

    def add_offset(self, value: float) -> None:
        self.structured = False
        self._check_mutable()
        self.offset += value

    def get_linear(self, i: int) -> float:
        return self.linear.get(i, 0.0)

    def get_quadratic(self, i: int, j: int) -> float:
        if i == j:
            return self.get_linear(i)
        return self.quadratic.get((i, j) if i < j else (j, i), 0.0)

    def freeze(self) -> "QuboModel":
        """Drop zero coefficients and forbid further mutation."""
        if not self.frozen:
            self.linear = {k: v for k, v in sorted(self.linear.items()) if v != 0}
            self.quadratic = {k: v for k, v in sorted(self.quadratic.items()) if v != 0}
            self.frozen = True
        return self

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(h, rows, cols, vals) with ``rows < cols``."""
        h = np.zeros(self.num_vars)
        for i, v in self.linear.items():
            h[i] = v
        if self.quadratic:
            keys = np.array(list(self.quadratic.keys()), dtype=np.int64)
            vals = np.array(list(self.quadratic.values()), dtype=float)
            return h, keys[:, 0], keys[:, 1], vals
        empty = np.zeros(0, dtype=np.int64)
        return h, empty, empty, np.zeros(0)

    def merged(self, other: "QuboModel") -> "QuboModel":
        """Sum of two models over the same variable space (labels from ``self``)."""
        if other.num_vars != self.num_vars:
            raise ValueError("models must share a variable space")
        out = QuboModel(dict(self.linear), dict(self.quadratic), self.offset, list(self.labels))
        for i, v in other.linear.items():
            out._add_linear(i, v)
        for (i, j), v in other.quadratic.items():
            out._add_quadratic(i, j, v)
        out.offset += other.offset
        out.structured = self.structured and other.structured
        if out.structured:
            out.objective = dict(self.objective)
            for i, v in other.objective.items():
                out.objective[i] = out.objective.get(i, 0.0) + v
            out.squares = [*self.squares, *other.squares]
        return out

    def penalty_breakdown(self, bits: Sequence[int]) -> dict[str, float]:
        """Penalty energy per constraint group, from the construction record."""
        if not self.structured:
            raise ValueError("model has no construction record")
        x = np.asarray(bits, dtype=float).ravel()
        names, gid, rows, cols, coef, const, weight = self._square_arrays()
        resid = const + np.bincount(rows, weights=coef * x[cols], minlength=len(const))
        per_group = np.bincount(gid, weights=weight * resid * resid, minlength=len(names))
        return {name: float(v) for name, v in zip(names, per_group)}

    def _square_arrays(self):
        cache = self.__dict__.get("_sq_cache")
        if cache is None or cache[0] != len(self.squares):
            names = list(dict.fromkeys(sq.group for sq in self.squares))
            pos = {name: k for k, name in enumerate(names)}
            gid = np.array([pos[sq.group] for sq in self.squares], dtype=np.int64)
            rows = np.array([k for k, sq in enumerate(self.squares) for _ in sq.terms], dtype=np.int64)
            cols = np.array([v for sq in self.squares for v, _ in sq.terms], dtype=np.int64)
            coef = np.array([c for sq in self.squares for _, c in sq.terms], dtype=float)
            const = np.array([sq.constant for sq in self.squares], dtype=float)
            weight = np.array([sq.weight for sq in self.squares], dtype=float)
            cache = (len(self.squares), (names, gid, rows, cols, coef, const, weight))
            self.__dict__["_sq_cache"] = cache
        return cache[1]

    def objective_value(self, bits: Sequence[int]) -> float:
        x = np.asarray(bits, dtype=float).ravel()
        return float(sum(c * x[i] for i, c in self.objective.items()))


def energy(model: QuboModel, bits: Sequence[int]) -> float:
    x = np.asarray(bits, dtype=float).ravel()
    if x.shape[0] != model.num_vars:
        raise ValueError(f"expected {model.num_vars} bits, got {x.shape[0]}")
    h, rows, cols, vals = model.arrays()
    return float(model.offset + h @ x + np.sum(vals * x[rows] * x[cols]))


def energies(model: QuboModel, states: np.ndarray) -> np.ndarray:
    """Vectorized :func:`energy` over the rows of ``states``."""
    x = np.asarray(states, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.num_vars:
        raise ValueError(f"expected (k, {model.num_vars}) states")
    h, rows, cols, vals = model.arrays()
    return model.offset + x @ h + (x[:, rows] * x[:, cols]) @ vals


def add_squared_equality_penalty(
    model: QuboModel,
    terms: Iterable[tuple[int, float]],
    constant: float,
    weight: float,
    group: str = "penalty",
) -> None:
    """Add ``weight * (sum(coeff * x) + constant)**2`` expanded with x*x = x."""
    if not weight > 0:
        raise ValueError("weight must be positive")
    merged: dict[int, float] = {}
    for var, coeff in terms:
        merged[var] = merged.get(var, 0.0) + coeff
    items = [(v, c) for v, c in merged.items() if c != 0]
    model._check_mutable()
    model.squares.append(SquaredTerm(group, tuple(items), float(constant), float(weight)))
    model.offset += weight * constant * constant
    for k, (i, ci) in enumerate(items):
        model._add_linear(i, weight * (ci * ci + 2.0 * ci * constant))
        for j, cj in items[k + 1 :]:
            model._add_quadratic(i, j, 2.0 * weight * ci * cj)


def slack_coefficients(upper: int) -> list[int]:
    """Binary expansion weights whose subset sums cover exactly ``0..upper``.

    Powers of two with the last one trimmed, ``ceil(log2(upper + 1))`` terms.
    """
    if upper < 0:
        raise ValueError("upper bound must be non-negative")
    if upper == 0:
        return []
    nbits = math.ceil(math.log2(upper + 1))
    coeffs = [1 << k for k in range(nbits - 1)]
    coeffs.append(upper - sum(coeffs))
    return coeffs


def add_slack_variables(model: QuboModel, upper: int, group: str, index: int) -> list[tuple[int, int]]:
    """Create slack bits spanning ``0..upper``; returns ``(var, coefficient)`` pairs."""
    return [
        (model.add_variable(VarLabel("slack", group, index, k)), c)
        for k, c in enumerate(slack_coefficients(upper))
    ]


def add_inequality_penalty_with_slack(
    model: QuboModel,
    terms: Sequence[tuple[int, int]],
    bound: int,
    weight: float,
    group: str = "ineq",
    index: int = 0,
) -> list[int]:
    """Penalize ``sum(coeff * x) <= bound`` as ``weight * (sum + slack - bound)**2``.

    Returns the ids of the new slack variables.
    """
    if bound < 0:
        raise ValueError("bound must be non-negative")
    for _, coeff in terms:
        if coeff < 0 or coeff != int(coeff):
            raise ValueError("coefficients must be non-negative integers")
    slack = add_slack_variables(model, int(bound), group, index)
    add_squared_equality_penalty(model, [*terms, *slack], -float(bound), weight, group)
    return [v for v, _ in slack]


def dumps(model: QuboModel) -> str:
    """Text dump: ``# offset``, ``# label`` comments then ``i j coeff`` lines.

    Linear terms are written as ``i i coeff``.
    """
    lines = [f"# qubo {model.num_vars}", f"# offset {model.offset!r}"]
    lines += [f"# label {i} {label}" for i, label in enumerate(model.labels)]
    lines += [f"{i} {i} {v!r}" for i, v in sorted(model.linear.items())]
    lines += [f"{i} {j} {v!r}" for (i, j), v in sorted(model.quadratic.items())]
    return "\n".join(lines) + "\n"


def loads(text: str) -> QuboModel:
    model = QuboModel()
    labels: dict[int, VarLabel] = {}
    num_vars = 0
    terms = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if parts[0] == "qubo":
                num_vars = int(parts[1])
            elif parts[0] == "offset":
                model.offset = float(parts[1])
            elif parts[0] == "label":
                a = parts[3]
                labels[int(parts[1])] = VarLabel(
                    parts[2], int(a) if a.lstrip("-").isdigit() else a, int(parts[4]), int(parts[5])
                )
            continue
        i, j, v = line.split()
        terms.append((int(i), int(j), float(v)))
    num_vars = max([num_vars, len(labels), *(max(i, j) + 1 for i, j, _ in terms)])
    model.labels = [labels.get(i, VarLabel("var", i, 0, 0)) for i in range(num_vars)]
    for i, j, v in terms:
        model.add_quadratic(i, j, v)
    model.structured = False
    return model.freeze()
