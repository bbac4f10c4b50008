"""Benchmark harness: optimality gaps of both pipelines against best-known costs."""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from sklearn.metrics import silhouette_score

from .clustering import FcmConfig, fcm_for_instance
from .instance import Instance, data_dir
from .pipeline import PipelineConfig, PipelineError, run, validate

log = logging.getLogger(__name__)

REFERENCE_FILE = "best_known.txt"
_PACKAGE_REFERENCE = Path(__file__).resolve().parent / "data" / REFERENCE_FILE


@dataclass(frozen=True)
class Reference:
    cost: int
    optimal: bool


def parse_reference(text: str) -> dict[str, Reference]:
    """``name cost optimal_flag`` per line; ``#`` starts a comment."""
    table: dict[str, Reference] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected 'name cost optimal_flag', got {raw!r}")
        name, cost, flag = parts
        if flag.lower() not in ("0", "1", "true", "false", "yes", "no"):
            raise ValueError(f"line {lineno}: bad optimal flag {flag!r}")
        try:
            value = int(cost)
        except ValueError:
            raise ValueError(f"line {lineno}: bad cost {cost!r}") from None
        table[name] = Reference(value, flag.lower() in ("1", "true", "yes"))
    return table


def load_reference(path: str | os.PathLike | None = None) -> dict[str, Reference]:
    """Reference table from ``path``, else the data directory, else the packaged copy."""
    if path is None:
        path = data_dir() / REFERENCE_FILE
        if not Path(path).exists():
            path = _PACKAGE_REFERENCE
    return parse_reference(Path(path).read_text())


def optimality_gap(cost: float, best_known: float) -> float:
    return (cost - best_known) / best_known


@dataclass
class BenchmarkRecord:
    instance: str
    strategy: str
    seed: int
    cost: int | None
    best_known: int | None
    gap: float | None
    feasible: bool
    repaired: bool
    wall_clock: float
    error: str | None = None

    def to_json(self) -> dict:
        return asdict(self)


# -- instance classes ---------------------------------------------------------


def depot_hull_distance(instance: Instance) -> float:
    """Distance from the depot to the boundary of the convex hull of all nodes."""
    pts = instance.coords
    depot = pts[0]
    try:
        hull = ConvexHull(pts)
    except QhullError:
        return 0.0  # degenerate (collinear) layouts have no interior
    if 0 in hull.vertices:
        return 0.0
    best = np.inf
    for a, b in hull.simplices:
        p, q = pts[a], pts[b]
        d = q - p
        t = np.clip(np.dot(depot - p, d) / max(np.dot(d, d), 1e-300), 0.0, 1.0)
        best = min(best, float(np.linalg.norm(depot - (p + t * d))))
    return best


def classify_instance(
    instance: Instance,
    hull_tolerance: float = 0.02,
    silhouette_threshold: float = 0.5,
    seed: int = 0,
) -> dict:
    """Depot corner/center and customer clustered/scattered labels.

    corner: the depot is within ``hull_tolerance`` x (bounding-box diagonal)
    of the convex hull boundary. clustered: silhouette of the hard FCM
    labelling with one cluster per truck exceeds ``silhouette_threshold``.
    """
    pts = instance.coords
    span = pts.max(axis=0) - pts.min(axis=0)
    diagonal = float(np.hypot(*span))
    hull_dist = depot_hull_distance(instance)
    depot = "corner" if hull_dist <= hull_tolerance * diagonal else "center"

    customers = pts[1:]
    k = instance.truck_count
    score = None
    if 2 <= k < len(customers):
        mm = fcm_for_instance(instance, k, FcmConfig(seed=seed, depot_copies=0))
        labels = mm.hard_labels()
        if len(set(labels.tolist())) > 1:
            score = float(silhouette_score(customers, labels))
    distribution = "clustered" if score is not None and score > silhouette_threshold else "scattered"
    return {
        "distribution": distribution,
        "depot": depot,
        "silhouette": score,
        "hull_distance": hull_dist,
        "diagonal": diagonal,
    }


# -- runs ---------------------------------------------------------------------


@dataclass
class SummaryRow:
    instance: str
    best_known: int | None
    best: dict[str, int | None] = field(default_factory=dict)  # strategy -> best feasible cost
    gap: dict[str, float | None] = field(default_factory=dict)
    winner: str | None = None
    classes: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)


def run_one(instance: Instance, strategy: str, seed: int, config: PipelineConfig, reference: dict[str, Reference]) -> BenchmarkRecord:
    ref = reference.get(instance.name)
    best_known = ref.cost if ref else None
    cfg = replace(config, strategy=strategy).with_seed(seed)
    t = time.perf_counter()
    try:
        report = run(instance, cfg)
    except PipelineError as exc:
        return BenchmarkRecord(instance.name, strategy, seed, None, best_known, None, False, False, time.perf_counter() - t, str(exc))
    wall = time.perf_counter() - t
    # the record carries what the checker recomputes, not what the pipeline claims
    check = validate(report.solution, instance)
    gap = optimality_gap(check.cost, best_known) if best_known else None
    error = None if check.feasible else "; ".join(check.reasons)
    return BenchmarkRecord(instance.name, strategy, seed, check.cost, best_known, gap, check.feasible, report.solution.repaired, wall, error)


def summarize(records: Sequence[BenchmarkRecord], instances: Sequence[Instance], strategies: Sequence[str], classes=None) -> list[SummaryRow]:
    rows = []
    for inst in instances:
        mine = [r for r in records if r.instance == inst.name]
        best_known = next((r.best_known for r in mine if r.best_known is not None), None)
        row = SummaryRow(inst.name, best_known, classes=(classes or {}).get(inst.name, {}))
        for s in strategies:
            costs = [r.cost for r in mine if r.strategy == s and r.feasible and r.cost is not None]
            row.best[s] = min(costs) if costs else None
            row.gap[s] = optimality_gap(row.best[s], best_known) if costs and best_known else None
        found = {s: c for s, c in row.best.items() if c is not None}
        if found:
            low = min(found.values())
            winners = sorted(s for s, c in found.items() if c == low)
            row.winner = winners[0] if len(winners) == 1 else "tie"
        rows.append(row)
    return rows


def run_benchmark(
    instances: Iterable[Instance],
    strategies: Sequence[str] = ("h2s", "h3s"),
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    config: PipelineConfig = PipelineConfig(),
    reference: dict[str, Reference] | None = None,
    stream: IO[str] | None = None,
    classify: bool = True,
) -> tuple[list[BenchmarkRecord], list[SummaryRow]]:
    """Every (instance, strategy, seed); records go to ``stream`` as JSON lines when given."""
    instances = list(instances)
    reference = load_reference() if reference is None else reference
    records = []
    for inst in instances:
        if inst.name not in reference:
            log.warning("no reference cost for %s; gaps will be null", inst.name)
        for strategy in strategies:
            for seed in seeds:
                rec = run_one(inst, strategy, seed, config, reference)
                records.append(rec)
                if stream is not None:
                    stream.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
                    stream.flush()
    classes = {inst.name: classify_instance(inst) for inst in instances} if classify else None
    return records, summarize(records, instances, strategies, classes)


def format_summary(rows: Sequence[SummaryRow], strategies: Sequence[str] = ("h2s", "h3s")) -> str:
    def cell(v, fmt):
        return "-" if v is None else format(v, fmt)

    head = ["instance", "best_known"]
    for s in strategies:
        head += [s, f"{s}_gap"]
    head += ["winner", "distribution", "depot"]
    lines = [head]
    for r in rows:
        line = [r.instance, cell(r.best_known, "d")]
        for s in strategies:
            line += [cell(r.best.get(s), "d"), cell(r.gap.get(s), ".4f")]
        line += [r.winner or "-", r.classes.get("distribution", "-"), r.classes.get("depot", "-")]
        lines.append(line)
    widths = [max(len(str(row[k])) for row in lines) for k in range(len(head))]
    return "\n".join("  ".join(str(v).ljust(w) for v, w in zip(row, widths)).rstrip() for row in lines) + "\n"
