"""Agent-tree HPC performance monitoring with quantile aggregation, on a simulated cluster."""

from .agents import CycleResult, collector_aggregate, persyst_measure, run_cycle, sync_merge
from .analyze import (
    GridDensityClustering,
    VectorizationClassifier,
    classify_vectorization,
    cores_to_nodes,
    detect_clusters,
    detect_tool_failures,
    emit_scatter,
    estimate_volume,
    expected_points,
    required_interval,
    runtime_stats,
)
from .presets import MachinePreset, WorkloadProfile, machine_preset, workload_preset
from .properties import CounterSample, PropertyDeriver, PropertyKind, derive
from .quantiles import QuantileSummary, cdf_eval, exact_summary, merge_estimate
from .simulator import SimConfig, generate_jobs, load_config, run_simulation, sample_counters
from .store import JobRecord, JobTable, PropertyStore, StoreRecord, decode_line, encode_line
from .topology import TreeTopology, build_tree, validate

__all__ = [
    "CycleResult",
    "collector_aggregate",
    "persyst_measure",
    "run_cycle",
    "sync_merge",
    "GridDensityClustering",
    "VectorizationClassifier",
    "classify_vectorization",
    "cores_to_nodes",
    "detect_clusters",
    "detect_tool_failures",
    "emit_scatter",
    "estimate_volume",
    "expected_points",
    "required_interval",
    "runtime_stats",
    "MachinePreset",
    "WorkloadProfile",
    "machine_preset",
    "workload_preset",
    "CounterSample",
    "PropertyDeriver",
    "PropertyKind",
    "derive",
    "QuantileSummary",
    "cdf_eval",
    "exact_summary",
    "merge_estimate",
    "SimConfig",
    "generate_jobs",
    "load_config",
    "run_simulation",
    "sample_counters",
    "JobRecord",
    "JobTable",
    "PropertyStore",
    "StoreRecord",
    "decode_line",
    "encode_line",
    "TreeTopology",
    "build_tree",
    "validate",
]

__version__ = "0.1.0"
