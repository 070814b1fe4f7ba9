"""Brute-force serializability witness search over committed history.

The committed transactions are reconstructed from the trace (reads from
the leader-side read records, writes from apply records), split into
consecutive windows in apply order, and each window is searched for a
serial order that explains every read and reproduces the window's
actual final state. The windowed form keeps the search exhaustive yet
bounded; window boundaries follow commit time, so a full-history
witness is the concatenation of the window witnesses.

Reads are validated against the state before the reading transaction in
the candidate order: the store never surfaces a transaction's own
pending writes, and the workload generator never reads a key the same
transaction wrote.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from ..store import initial_value, load_keys

WINDOW = 8


@dataclass
class CommittedTxn:
    tid: str
    order_t: int  # first apply time: the visibility point
    reads: list  # (key, value-hex or None) in execution order
    writes: dict  # key -> value-hex


@dataclass
class SerializabilityReport:
    windows: list  # per window: list of tids in witness order
    violation: Optional[dict] = None

    @property
    def ok(self) -> bool:
        return self.violation is None

    def witness(self) -> list[str]:
        return [tid for window in self.windows for tid in window]


def committed_history(records: list[dict]) -> list[CommittedTxn]:
    reads: dict[str, list] = {}
    for rec in records:
        if rec["kind"] == "read":
            reads.setdefault(rec["tid"], []).append((rec["key"], rec.get("value")))
    txns: dict[str, CommittedTxn] = {}
    for rec in records:
        if rec["kind"] != "apply" or rec["decision"] != "commit":
            continue
        txn = txns.get(rec["tid"])
        if txn is None:
            txn = CommittedTxn(rec["tid"], rec["t"], reads.get(rec["tid"], []), {})
            txns[rec["tid"]] = txn
        for key, value_hex in rec.get("writes", []):
            txn.writes[key] = value_hex
    return sorted(txns.values(), key=lambda x: (x.order_t, x.tid))


def _valid_next(txn: CommittedTxn, state: dict) -> bool:
    return all(state.get(key) == value for key, value in txn.reads)


def _search(pending: list[CommittedTxn], state: dict, target: dict, order: list) -> bool:
    """Depth-first over remaining transactions; prunes any prefix whose
    next transaction would have read something other than what it read."""
    if not pending:
        return state == target
    for i, txn in enumerate(pending):
        if not _valid_next(txn, state):
            continue
        touched = {k: state.get(k) for k in txn.writes}
        state.update(txn.writes)
        order.append(txn.tid)
        if _search(pending[:i] + pending[i + 1 :], state, target, order):
            return True
        order.pop()
        for k, v in touched.items():
            if v is None:
                state.pop(k, None)
            else:
                state[k] = v
    return False


def check_serializable(records: list[dict], window: int = WINDOW) -> SerializabilityReport:
    meta = next((r for r in records if r["kind"] == "meta"), {})
    seed = meta.get("seed", 0)
    value_size = meta.get("value_size", 10)
    state = {k: initial_value(seed, k, value_size).hex() for k in load_keys(meta.get("key_space", 0))}
    history = committed_history(records)
    report = SerializabilityReport(windows=[])
    for at in range(0, len(history), window):
        chunk = history[at : at + window]
        # the actual store evolution applies writes in commit order
        target = dict(state)
        for txn in chunk:
            target.update(txn.writes)
        # commit order is the expected witness under strict locking
        order: list[str] = []
        probe = dict(state)
        for txn in chunk:
            if not _valid_next(txn, probe):
                break
            probe.update(txn.writes)
            order.append(txn.tid)
        if len(order) != len(chunk):
            order = []
            if not _search(list(chunk), dict(state), target, order):
                report.violation = {
                    "window": at // window,
                    "tids": [t.tid for t in chunk],
                    "detail": "no serial order explains the reads and final state",
                }
                return report
        report.windows.append(order)
        state = target
    return report
