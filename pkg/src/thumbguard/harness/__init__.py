"""Pipeline orchestration, corpus, differential testing, attacks and metrics."""

from .attacks import SecurityReport, attack_suite, campaign
from .corpus import Benchmark, Workload, get_benchmark, load_corpus
from .differential import DiffVerdict, differential_check
from .metrics import Metrics, measure
from .pipeline import PipelineConfig, PipelineError, PipelineResult, build_variant, run_pipeline

__all__ = ["Benchmark", "DiffVerdict", "Metrics", "PipelineConfig", "PipelineError", "PipelineResult",
           "SecurityReport", "Workload", "attack_suite", "build_variant", "campaign",
           "differential_check", "get_benchmark", "load_corpus", "measure", "run_pipeline"]
