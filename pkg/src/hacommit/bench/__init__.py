"""Workload benchmarking, trace auditing, and scripted fault scenarios."""
from .audit import AuditReport, audit_trace
from .experiment import PROTOCOLS, RunResult, run_experiment, sweep, to_csv
from .metrics import CSV_COLUMNS, Metrics
from .serializability import check_serializable
from .workload import WorkloadSpec

__all__ = [
    "AuditReport",
    "audit_trace",
    "PROTOCOLS",
    "RunResult",
    "run_experiment",
    "sweep",
    "to_csv",
    "CSV_COLUMNS",
    "Metrics",
    "check_serializable",
    "WorkloadSpec",
]
