"""Command-line entry point: solve, cluster, qubo-dump, bench, plot.

Exit codes: 0 success (feasible), 2 infeasible result, 1 runtime error,
64 bad usage. Settings come from defaults, then an optional ``key=value``
config file, then flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import qubo
from .assignment import cluster_capacity
from .bench import format_summary, load_reference, run_benchmark
from .clustering import FcmConfig, derived_seed, fcm_for_instance, select_cluster_count
from .instance import cost_matrix, data_dir, load_instance
from .pipeline import (
    STRATEGIES,
    WEIGHT_PROFILES,
    PipelineConfig,
    PipelineError,
    _assign,
    cluster_stage,
    default_candidates,
    run,
    weights_for,
)
from .plot import render_svg
from .routing_qubo import RoutingProblem, build_cvrp_qubo
from .sampler import SamplerConfig

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE, EXIT_USAGE = 0, 1, 2, 64

log = logging.getLogger("hybridvrp")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def read_config_file(path: str) -> dict[str, str]:
    """``key=value`` lines; ``#`` comments and blank lines ignored. Keys use flag spelling."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


# settings shared by the pipeline commands: name -> (parser, default)
_SETTINGS = {
    "strategy": (str, "h2s"),
    "seed": (int, 0),
    "reads": (int, 200),
    "sweeps": (int, 2000),
    "beta_min": (float, None),
    "beta_max": (float, None),
    "candidates": (_int_list, None),
    "repair": (lambda v: str(v).lower() in ("1", "true", "yes", "on"), False),
    "workers": (int, None),
    "weights": (str, "annealing"),
}


def _settings(args) -> dict:
    file_values = read_config_file(args.config) if getattr(args, "config", None) else {}
    unknown = sorted(set(file_values) - set(_SETTINGS))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    out = {}
    for key, (parse, default) in _SETTINGS.items():
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in file_values:
            try:
                out[key] = parse(file_values[key])
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"config key {key}: {exc}") from None
        else:
            out[key] = default
    if out["strategy"] not in STRATEGIES:
        raise UsageError(f"unknown strategy {out['strategy']!r}")
    if out["weights"] not in WEIGHT_PROFILES:
        raise UsageError(f"unknown weight profile {out['weights']!r}")
    return out


def _pipeline_config(s: dict) -> PipelineConfig:
    schedule = None
    if s["beta_min"] is not None or s["beta_max"] is not None:
        if s["beta_min"] is None or s["beta_max"] is None:
            raise UsageError("--beta-min and --beta-max go together")
        schedule = (s["beta_min"], s["beta_max"])
    try:
        sampler = SamplerConfig(s["reads"], s["sweeps"], schedule, s["seed"], s["workers"])
        return PipelineConfig(
            strategy=s["strategy"],
            fcm=FcmConfig(seed=s["seed"]),
            sampler=sampler,
            cluster_candidates=tuple(s["candidates"]) if s["candidates"] else None,
            repair_enabled=s["repair"],
            workers=s["workers"],
            weight_profile=s["weights"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _write(text: str, out: str | None) -> None:
    if out and out != "-":
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# -- commands -----------------------------------------------------------------


def cmd_solve(args) -> int:
    s = _settings(args)
    config = _pipeline_config(s)
    instance = load_instance(args.path)
    try:
        report = run(instance, config)
    except PipelineError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        doc = {
            "instance": instance.name,
            "strategy": config.strategy,
            "feasible": False,
            "error": str(exc),
            "stage": exc.stage,
            "penalties": exc.penalties,
        }
        _write(json.dumps(doc, sort_keys=True, indent=1) + "\n", args.out)
        return EXIT_INFEASIBLE
    _write(report.dumps(timings=not args.no_timings) + "\n", args.out)
    if args.plot:
        Path(args.plot).write_text(render_svg(instance, report.solution.routes, title=f"{instance.name} {config.strategy}"))
    ok = report.solution.feasible and report.validation.feasible
    if not ok:
        print(f"infeasible: {'; '.join(report.validation.reasons) or report.solution.penalty_breakdown}", file=sys.stderr)
    return EXIT_OK if ok else EXIT_INFEASIBLE


def cmd_cluster(args) -> int:
    s = _settings(args)
    config = _pipeline_config(s)
    instance = load_instance(args.path)
    p = instance.truck_count
    if args.clusters is not None:
        c = args.clusters
        mm = fcm_for_instance(instance, c, replace(config.fcm, seed=derived_seed(s["seed"], c)))
        try:
            capacity = cluster_capacity(instance.truck_capacity, c, p)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        assignment, elbow = _assign(instance, mm, capacity), None
    else:
        stage = cluster_stage(instance, config)
        c, mm, assignment, elbow = stage.clusters, stage.memberships, stage.assignment, stage.elbow
    doc = {"instance": instance.name, "clusters": c, "fcm": mm.to_json(), "assignment": assignment.to_json()}
    if elbow is not None:
        doc["elbow"] = {"chosen": elbow.chosen, "candidates": elbow.candidates, "distances": elbow.distances}
    _write(json.dumps(doc, sort_keys=True, indent=1) + "\n", args.out)
    return EXIT_OK


def cmd_qubo_dump(args) -> int:
    s = _settings(args)
    config = _pipeline_config(s)
    instance = load_instance(args.path)
    p, Q = instance.truck_count, instance.truck_capacity
    if args.level == "tsp":
        # the H2S decomposition unless a cluster count is given
        c = args.clusters or p
        mm = fcm_for_instance(instance, c, replace(config.fcm, seed=derived_seed(s["seed"], c)))
        assignment = _assign(instance, mm, cluster_capacity(Q, c, p))
        k = args.cluster
        if not 0 <= k < c:
            raise IndexError(f"cluster {k} out of range: the run has {c} clusters")
        nodes = [0, *assignment.clusters[k].members]
        cost = instance.cost_matrix()[np.ix_(nodes, nodes)]
        demands = (0,) * len(nodes)
        problem = RoutingProblem(cost, demands, 1, None, weights_for(cost, demands, config))
    else:
        if args.cluster is not None and args.cluster != 0:
            raise IndexError("--cluster applies to --level tsp only")
        elbow = select_cluster_count(instance, s["candidates"] or default_candidates(p), config.fcm)
        c = elbow.chosen
        assignment = _assign(instance, elbow.runs[c], cluster_capacity(Q, c, p))
        cost = cost_matrix([instance.nodes[0].point, *(cl.centroid for cl in assignment.clusters)])
        demands = (0, *(cl.aggregate_demand for cl in assignment.clusters))
        problem = RoutingProblem(cost, demands, p, Q, weights_for(cost, demands, config))
    rm = build_cvrp_qubo(problem)
    _write(qubo.dumps(rm.model), args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    s = _settings(args)
    config = _pipeline_config(s)
    names = args.instances or sorted(p.stem for p in data_dir().glob("*.vrp"))
    instances = [load_instance(n) for n in names]
    reference = load_reference(args.reference)
    strategies = args.strategies.split(",") if args.strategies else list(STRATEGIES)
    bad = [x for x in strategies if x not in STRATEGIES]
    if bad:
        raise UsageError(f"unknown strategies: {', '.join(bad)}")
    stream = open(args.records, "w") if args.records else None
    try:
        _, rows = run_benchmark(instances, strategies, args.seeds, config, reference, stream)
    finally:
        if stream:
            stream.close()
    _write(format_summary(rows, strategies), args.out)
    return EXIT_OK


def cmd_plot(args) -> int:
    doc = json.loads(Path(args.report).read_text())
    routes = doc.get("solution", {}).get("routes")
    if routes is None:
        routes = doc.get("routes", [])
    instance = load_instance(args.instance or doc["instance"])
    _write(render_svg(instance, routes, title=f"{instance.name} {doc.get('strategy', '')}".strip()), args.out)
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def _pipeline_flags(p: argparse.ArgumentParser, strategy: bool = True) -> None:
    if strategy:
        p.add_argument("--strategy", choices=STRATEGIES, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--reads", type=int, default=None, help="sampler reads per subproblem (200)")
    p.add_argument("--sweeps", type=int, default=None, help="sweeps per read (2000)")
    p.add_argument("--beta-min", type=float, default=None)
    p.add_argument("--beta-max", type=float, default=None)
    p.add_argument("--candidates", type=_int_list, default=None, help="H3S cluster counts, e.g. 5,10,15,20")
    p.add_argument("--repair", action="store_const", const=True, default=None, help="greedy repair when no sample is feasible")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--weights", choices=WEIGHT_PROFILES, default=None, help="penalty weight profile")
    p.add_argument("--config", default=None, help="key=value settings file (flags win)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hybridvrp", description="Cluster-first CVRP solving with QUBO samplers.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="run H2S or H3S and write a JSON report")
    p.add_argument("path", help="instance file, or a name in the data directory")
    _pipeline_flags(p)
    p.add_argument("--out", default=None, help="report path (stdout if omitted)")
    p.add_argument("--plot", default=None, help="also write an SVG route map")
    p.add_argument("--no-timings", action="store_true", help="omit wall-clock fields")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("cluster", help="FCM memberships and capacity-aware assignment")
    p.add_argument("path")
    _pipeline_flags(p)
    p.add_argument("--clusters", type=int, default=None, help="fixed cluster count")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("qubo-dump", help="write the QUBO of one pipeline stage")
    p.add_argument("path")
    p.add_argument("--level", choices=("cvrp", "tsp"), required=True)
    p.add_argument("--cluster", type=int, default=None, help="cluster index for --level tsp (default 0)")
    p.add_argument("--clusters", type=int, default=None, help="cluster count for --level tsp (default: truck count)")
    _pipeline_flags(p, strategy=False)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_qubo_dump)

    p = sub.add_parser("bench", help="optimality gaps over instances, strategies and seeds")
    p.add_argument("instances", nargs="*", help="names or paths (default: every instance in the data directory)")
    p.add_argument("--strategies", default=None, help="comma-separated, default h2s,h3s")
    p.add_argument("--seeds", type=_int_list, default=[0, 1, 2, 3, 4])
    p.add_argument("--reference", default=None, help="'name cost optimal_flag' file")
    p.add_argument("--records", default=None, help="JSON-lines record stream")
    _pipeline_flags(p, strategy=False)
    p.add_argument("--out", default=None, help="summary table path (stdout if omitted)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("plot", help="SVG route map from a solve report")
    p.add_argument("report")
    p.add_argument("instance", nargs="?", default=None, help="defaults to the report's instance name")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors (64) and --help (0) as return codes
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "qubo-dump" and args.level == "tsp" and args.cluster is None:
        args.cluster = 0
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"hybridvrp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # reported, not traced: scripts read the exit code
        print(f"hybridvrp: error: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
