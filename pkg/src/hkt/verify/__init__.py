"""Executable certificates: leakage, reduction oracles, op counts, gradients."""

from .bench import BenchRow, bench_config, benchmark, time_step
from .gradients import PRIMITIVES, model_errors, primitive_errors
from .leakage import LeakageReport, leakage_matrix, measure_leakage
from .opcount import OpCount, count_ops, theory_ratio
from .oracles import causal_conv, flat_mha, single_level_forward
from .suites import (
    SUITES, Certificate, causal_config, causal_suite, format_table, gradient_suite, ops_suite,
    reduction_suite, run_suites,
)

__all__ = [
    "BenchRow", "bench_config", "benchmark", "time_step",
    "LeakageReport", "leakage_matrix", "measure_leakage", "OpCount", "count_ops", "theory_ratio",
    "flat_mha", "causal_conv", "single_level_forward", "PRIMITIVES", "primitive_errors",
    "model_errors", "Certificate", "SUITES", "ops_suite", "causal_suite", "reduction_suite",
    "gradient_suite", "run_suites", "format_table", "causal_config",
]
