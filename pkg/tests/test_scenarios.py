"""Scripted failure scenarios at unit scale."""
from collections import Counter

import pytest

from hacommit.bench.audit import audit_trace
from hacommit.bench.scenarios import client_failure_repair, random_fault_run, tpc_blocking
from hacommit.topology import replica_node


def test_client_failure_repair_finishes_every_transaction():
    res = client_failure_repair(seed=7, timeout_us=1_000_000)
    assert len(res.voted_tids) == 9 and res.committed_tid

    # every replica applied a decision for all ten transactions
    applied = {}  # (tid, node) -> decision
    for r in res.records:
        if r["kind"] == "apply":
            applied[(r["tid"], r["node"])] = r["decision"]
    nodes = {replica_node(0, i) for i in range(5)}
    for tid in res.voted_tids + [res.committed_tid]:
        assert {n for t, n in applied if t == tid} == nodes

    # dangling transactions abort, the partially-delivered commit survives
    by_tid = Counter()
    for (tid, _), decision in applied.items():
        want = "commit" if tid == res.committed_tid else "abort"
        assert decision == want
        by_tid[decision] += 1
    assert by_tid == {"abort": 45, "commit": 5}

    # one successful recovery round per transaction, no lock left behind
    starts = Counter(r["tid"] for r in res.records if r["kind"] == "recovery_start")
    assert set(starts) == set(res.voted_tids) | {res.committed_tid}
    assert all(n == 1 for n in starts.values())
    for node in nodes:
        assert not res.sim.nodes[node].store.locks.all_held()

    report = audit_trace(res.records)
    assert report.ok


def test_repair_observers_with_the_decision_applied_stay_quiet():
    res = client_failure_repair(seed=7, timeout_us=1_000_000)
    # three replicas saw the tenth commit before the client died; none
    # of them may start recovery for it
    starters = {r["node"] for r in res.records
                if r["kind"] == "recovery_start" and r["tid"] == res.committed_tid}
    early = {r["node"] for r in res.records
             if r["kind"] == "apply" and r["tid"] == res.committed_tid
             and r["decision"] == "commit" and r["t"] < 1_000_000}
    assert len(early) == 3
    assert not (starters & early)


def test_tpc_blocking_window_is_reported_not_hidden():
    res = tpc_blocking(seed=3)
    assert res.blocked_tid is not None
    report = audit_trace(res.records)
    assert report.ok  # blocking is legal, just undesirable
    assert any(f["kind"] == "blocked" and f["tid"] == res.blocked_tid
               for f in report.findings)


@pytest.mark.parametrize("protocol", ["hacommit", "2pc", "rcommit"])
def test_random_fault_runs_stay_safe(protocol):
    for seed in (0, 1, 2):
        res = random_fault_run(protocol, seed)
        report = res.audit()
        assert report.ok, f"{protocol} seed {seed}: {report.violations}"
