"""Cluster-first CVRP solving (H2S and H3S) with QUBO routing subproblems."""

from .instance import Instance, load_instance, make_instance, parse_instance
from .pipeline import PipelineConfig, PipelineError, PipelineReport, run, run_h2s, run_h3s, validate
from .sampler import SamplerConfig, anneal, exact_minimum, exhaustive

__all__ = [
    "Instance",
    "PipelineConfig",
    "PipelineError",
    "PipelineReport",
    "SamplerConfig",
    "anneal",
    "exact_minimum",
    "exhaustive",
    "load_instance",
    "make_instance",
    "parse_instance",
    "run",
    "run_h2s",
    "run_h3s",
    "validate",
]

__version__ = "0.1.0"
