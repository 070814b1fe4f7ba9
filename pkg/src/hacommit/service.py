"""HTTP facade over the bench package.

Endpoints mirror the library one-to-one: POST /run executes a single
seeded experiment, POST /audit re-checks a submitted trace, POST /sweep
runs the protocol x ops-per-txn cross product. The CLI talks to this
app in-process by default, so simulations stay deterministic either way.
"""
from __future__ import annotations

import json
from dataclasses import replace

from fastapi import FastAPI, HTTPException

from . import __version__
from .bench.audit import AuditReport, audit_trace
from .bench.experiment import run_experiment, sweep, to_csv
from .bench.metrics import Metrics, csv_header
from .bench.workload import WorkloadSpec
from .config import ProtocolConfig
from .schemas import (
    AuditRequest,
    AuditSummary,
    MetricsRow,
    RunRequest,
    RunResponse,
    SweepRequest,
    SweepResponse,
)
from .simnet import DelaySpec, FaultEvent

app = FastAPI(title="hacommit-bench", version=__version__)


def _metrics_row(m: Metrics) -> MetricsRow:
    return MetricsRow(
        protocol=m.protocol,
        ops_per_txn=m.ops_per_txn,
        seed=m.seed,
        commits=len(m.commits),
        aborts=m.aborts_final,
        retries=m.retries,
        mean_latency_us=m.mean_latency_us(),
        p99_latency_us=m.p99_latency_us(),
        throughput_tps=m.throughput_tps(),
        msg_delays_per_commit=m.msg_delays_per_commit(),
    )


def _audit_summary(report: AuditReport) -> AuditSummary:
    return AuditSummary(
        ok=report.ok,
        checks=list(report.checks),
        violations=report.violations,
        findings=report.findings,
    )


def execute_run(req: RunRequest) -> RunResponse:
    """Shared by the endpoint and the CLI's in-process client."""
    spec = WorkloadSpec(
        txn_count=req.txn_count,
        duration_s=req.duration_s,
        ops_per_txn=req.ops_per_txn,
        read_fraction=req.read_fraction,
        key_space=req.key_space,
        clients=req.clients,
        isolation=req.isolation,
        value_size=req.value_size,
        think_time_us=req.think_time_us,
    )
    cfg = ProtocolConfig(isolation=req.isolation)
    if req.timeout_us is not None:
        cfg = replace(cfg, timeout_us=req.timeout_us)
    cfg = cfg.with_one_way(req.one_way_us)
    faults = tuple(
        FaultEvent(at=f.at_us, action=f.action, target=f.target)
        for f in sorted(req.fault_schedule, key=lambda f: f.at_us)
    )
    result = run_experiment(
        spec,
        protocol=req.protocol,
        seed=req.seed,
        shards=req.shards,
        replicas=req.replicas,
        cfg=cfg,
        delay=DelaySpec("constant", req.one_way_us, req.one_way_us),
        drop_rate=req.drop_rate,
        fault_schedule=faults,
    )
    report = result.audit()
    return RunResponse(
        metrics=_metrics_row(result.metrics),
        audit=_audit_summary(report),
        csv=csv_header() + "\n" + result.metrics.csv_row() + "\n",
        trace=result.trace.to_lines() if req.include_trace else None,
    )


@app.get("/healthz")
def healthz() -> dict:
    return {"ok": True, "version": __version__}


@app.post("/run", response_model=RunResponse, response_model_exclude_none=True)
def run_endpoint(req: RunRequest) -> RunResponse:
    try:
        return execute_run(req)
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc))


@app.post("/audit", response_model=AuditSummary)
def audit_endpoint(req: AuditRequest) -> AuditSummary:
    try:
        records = [json.loads(line) for line in req.trace if line.strip()]
    except json.JSONDecodeError as exc:
        raise HTTPException(status_code=422, detail=f"bad trace line: {exc}")
    if not any(r.get("kind") == "meta" for r in records):
        raise HTTPException(status_code=422, detail="trace has no meta record")
    return _audit_summary(audit_trace(records, req.claimed_msg_delays))


@app.post("/sweep", response_model=SweepResponse)
def sweep_endpoint(req: SweepRequest) -> SweepResponse:
    rows = sweep(
        protocols=req.protocols,
        ops_values=req.ops_values,
        seeds=req.seeds,
        txn_count=req.txn_count,
        read_fraction=req.read_fraction,
        shards=req.shards,
        replicas=req.replicas,
        key_space=req.key_space,
        clients=req.clients,
    )
    return SweepResponse(rows=[_metrics_row(m) for m in rows], csv=to_csv(rows))
