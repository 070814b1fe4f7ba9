"""HTTP surface: request validation, run/audit/sweep round trips."""
import json

import pytest
from fastapi.testclient import TestClient

from hacommit import __version__
from hacommit.schemas import FaultSpec, RunRequest
from hacommit.service import app

client = TestClient(app)

RUN_BODY = {
    "protocol": "hacommit",
    "txn_count": 10,
    "ops_per_txn": 2,
    "read_fraction": 0.5,
    "key_space": 64,
    "seed": 3,
}


def test_healthz_reports_version():
    r = client.get("/healthz")
    assert r.status_code == 200
    assert r.json() == {"ok": True, "version": __version__}


def test_run_returns_metrics_audit_and_csv():
    r = client.post("/run", json=RUN_BODY)
    assert r.status_code == 200
    body = r.json()
    assert body["metrics"]["commits"] == 10
    assert body["metrics"]["mean_latency_us"] == 100.0
    assert body["metrics"]["msg_delays_per_commit"] == 2.0
    assert body["audit"]["ok"] is True
    header, row, _ = body["csv"].split("\n")
    assert header.startswith("protocol,") and row.startswith("hacommit,2,3,10,")
    assert "trace" not in body  # excluded unless requested


def test_run_trace_round_trips_through_the_audit_endpoint():
    r = client.post("/run", json={**RUN_BODY, "include_trace": True})
    assert r.status_code == 200
    body = r.json()
    assert body["trace"] and body["trace"][0].startswith("{")
    a = client.post("/audit", json={
        "trace": body["trace"],
        "claimed_msg_delays": body["metrics"]["msg_delays_per_commit"],
    })
    assert a.status_code == 200
    assert a.json()["ok"] is True


def test_run_applies_fault_schedule():
    body = {**RUN_BODY, "txn_count": 20, "clients": 2, "include_trace": True,
            "fault_schedule": [{"at_us": 2_000, "action": "crash", "target": "s0r1"}]}
    r = client.post("/run", json=body)
    assert r.status_code == 200
    kinds = {json.loads(line)["kind"] for line in r.json()["trace"]}
    assert "crash" in kinds
    assert r.json()["audit"]["ok"] is True


def test_run_rejects_unknown_protocol_and_bad_shapes():
    assert client.post("/run", json={**RUN_BODY, "protocol": "3pc"}).status_code == 422
    assert client.post("/run", json={**RUN_BODY, "read_fraction": 2.0}).status_code == 422
    assert client.post("/run", json={**RUN_BODY, "ops_per_txn": 0}).status_code == 422


def test_audit_rejects_garbage_and_metaless_traces():
    assert client.post("/audit", json={"trace": ["not json"]}).status_code == 422
    line = '{"kind": "apply", "tid": "t", "node": "s0r0", "decision": "commit", "seq": 1, "t": 1}'
    assert client.post("/audit", json={"trace": [line]}).status_code == 422


def test_audit_reports_violations_from_a_doctored_trace():
    r = client.post("/run", json={**RUN_BODY, "include_trace": True})
    trace = r.json()["trace"]
    tid = next(rec["tid"] for rec in map(json.loads, trace) if rec["kind"] == "apply")
    forged = json.dumps({"kind": "apply", "tid": tid, "node": "s9r9",
                         "decision": "abort", "seq": 999999, "t": 1})
    a = client.post("/audit", json={"trace": trace + [forged]})
    assert a.status_code == 200
    body = a.json()
    assert body["ok"] is False
    assert any(v["check"] == "agreement" for v in body["violations"])


def test_sweep_covers_the_protocol_ops_grid():
    r = client.post("/sweep", json={
        "protocols": ["hacommit", "2pc"],
        "ops_values": [1, 4],
        "seeds": [0],
        "txn_count": 5,
        "key_space": 64,
    })
    assert r.status_code == 200
    body = r.json()
    got = {(row["protocol"], row["ops_per_txn"]) for row in body["rows"]}
    assert got == {("hacommit", 1), ("hacommit", 4), ("2pc", 1), ("2pc", 4)}
    assert body["csv"].count("\n") == 5  # header + 4 rows


def test_run_request_defaults_to_a_fixed_txn_count():
    req = RunRequest()
    assert req.txn_count == 100 and req.duration_s is None
    timed = RunRequest(duration_s=0.5)
    assert timed.txn_count is None


def test_fault_spec_requires_targets_except_heal():
    assert FaultSpec(at_us=0, action="heal").target == ""
    with pytest.raises(ValueError):
        FaultSpec(at_us=0, action="crash")
    with pytest.raises(ValueError):
        FaultSpec(at_us=-1, action="heal")
