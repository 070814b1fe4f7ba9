"""Request and response bodies for the HTTP service.

The service is a thin wrapper: these models validate inputs, the bench
package does the work, and responses carry the same metrics row and
audit report the library returns.
"""
from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field, model_validator

Protocol = Literal["hacommit", "hacommit-rc", "2pc", "rcommit"]
Isolation = Literal["serializable", "read-committed"]
FaultAction = Literal["crash", "restart", "partition", "heal"]


class FaultSpec(BaseModel):
    """One scheduled fault: time, action, and (except heal) a target."""

    at_us: int = Field(ge=0)
    action: FaultAction
    target: str = ""

    @model_validator(mode="after")
    def _target_required(self) -> "FaultSpec":
        if self.action in ("crash", "restart", "partition") and not self.target:
            raise ValueError(f"fault action {self.action!r} needs a target")
        return self


class RunRequest(BaseModel):
    protocol: Protocol = "hacommit"
    ops_per_txn: int = Field(default=4, ge=1)
    read_fraction: float = Field(default=0.5, ge=0.0, le=1.0)
    shards: int = Field(default=2, ge=1)
    replicas: int = Field(default=3, ge=1)
    clients: int = Field(default=1, ge=1)
    seed: int = 0
    txn_count: Optional[int] = Field(default=None, ge=1)
    duration_s: Optional[float] = Field(default=None, gt=0)
    key_space: int = Field(default=10_000, ge=1)
    value_size: int = Field(default=10, ge=1)
    think_time_us: int = Field(default=0, ge=0)
    isolation: Isolation = "serializable"
    one_way_us: int = Field(default=50, ge=1)
    drop_rate: float = Field(default=0.0, ge=0.0, lt=1.0)
    timeout_us: Optional[int] = Field(default=None, ge=1)
    fault_schedule: list[FaultSpec] = Field(default_factory=list)
    include_trace: bool = False

    @model_validator(mode="after")
    def _default_horizon(self) -> "RunRequest":
        # one of the two horizons must be set; default to a short fixed run
        if self.txn_count is None and self.duration_s is None:
            self.txn_count = 100
        return self


class MetricsRow(BaseModel):
    protocol: str
    ops_per_txn: int
    seed: int
    commits: int
    aborts: int
    retries: int
    mean_latency_us: float
    p99_latency_us: float
    throughput_tps: float
    msg_delays_per_commit: float


class AuditSummary(BaseModel):
    ok: bool
    checks: list[str]
    violations: list[dict]
    findings: list[dict]


class RunResponse(BaseModel):
    metrics: MetricsRow
    audit: AuditSummary
    csv: str
    trace: Optional[list[str]] = None


class AuditRequest(BaseModel):
    trace: list[str]
    claimed_msg_delays: Optional[float] = None


class SweepRequest(BaseModel):
    protocols: list[Protocol] = Field(default_factory=lambda: ["hacommit", "2pc", "rcommit"])
    ops_values: list[int] = Field(default_factory=lambda: [1, 4, 16, 64])
    seeds: list[int] = Field(default_factory=lambda: [0])
    txn_count: int = Field(default=30, ge=1)
    read_fraction: float = Field(default=0.0, ge=0.0, le=1.0)
    shards: int = Field(default=2, ge=1)
    replicas: int = Field(default=3, ge=1)
    key_space: int = Field(default=10_000, ge=1)
    clients: int = Field(default=1, ge=1)


class SweepResponse(BaseModel):
    rows: list[MetricsRow]
    csv: str
