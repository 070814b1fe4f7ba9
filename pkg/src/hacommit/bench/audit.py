"""Trace auditors: safety checks over a complete event trace.

Every check replays trace records against an independent model; none of
them consult protocol state. The report separates violations (safety
broken) from findings (notable-but-legal outcomes such as transactions
left blocked by a crashed 2PC coordinator).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..store import initial_value, load_keys

CHECKS = (
    "agreement",
    "validity",
    "stability",
    "vote-immutability",
    "two-phase-locking",
    "dirty-read",
    "delay-accounting",
)


@dataclass
class AuditReport:
    violations: list = field(default_factory=list)
    findings: list = field(default_factory=list)
    checks: tuple = CHECKS
    delay_counts: dict = field(default_factory=dict)  # tid -> message legs
    decisions: dict = field(default_factory=dict)  # tid -> applied decision

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, check: str, detail: str, **refs) -> None:
        self.violations.append({"check": check, "detail": detail, **refs})

    def find(self, kind: str, detail: str, **refs) -> None:
        self.findings.append({"kind": kind, "detail": detail, **refs})

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checks": list(self.checks),
            "violations": self.violations,
            "findings": self.findings,
            "decisions": dict(sorted(self.decisions.items())),
        }

    def render(self) -> str:
        lines = [f"audit: {'PASS' if self.ok else 'FAIL'} ({len(self.violations)} violations, {len(self.findings)} findings)"]
        for v in self.violations:
            lines.append(f"  VIOLATION {v['check']}: {v['detail']}")
        for f in self.findings:
            lines.append(f"  finding {f['kind']}: {f['detail']}")
        return "\n".join(lines)


def _meta(records: list[dict]) -> dict:
    for rec in records:
        if rec["kind"] == "meta":
            return rec
    return {}


def _shard_group(node: str) -> Optional[str]:
    """s3r1 -> s3; clients and coordinator backups have no shard group."""
    if not node.startswith("s"):
        return None
    head, sep, tail = node.partition("r")
    if not sep or not head[1:].isdigit() or not tail.isdigit():
        return None
    return head


def check_agreement(records: list[dict], report: AuditReport) -> None:
    decided: dict[str, dict] = {}
    for rec in records:
        if rec["kind"] != "apply":
            continue
        tid = rec["tid"]
        prev = decided.get(tid)
        if prev is not None and prev["decision"] != rec["decision"]:
            report.add(
                "agreement",
                f"{tid} applied as {prev['decision']} at seq {prev['seq']} and {rec['decision']} at seq {rec['seq']}",
                tid=tid,
                events=[prev["seq"], rec["seq"]],
            )
        decided.setdefault(tid, rec)
        report.decisions[tid] = decided[tid]["decision"]


def check_validity(records: list[dict], report: AuditReport) -> None:
    no_votes: dict[str, int] = {}
    for rec in records:
        if rec["kind"] == "vote" and rec["vote"] == "no":
            no_votes.setdefault(rec["tid"], rec["seq"])
    for rec in records:
        if rec["kind"] == "apply" and rec["decision"] == "commit" and rec["tid"] in no_votes:
            report.add(
                "validity",
                f"{rec['tid']} committed despite a NO vote at seq {no_votes[rec['tid']]}",
                tid=rec["tid"],
                events=[no_votes[rec["tid"]], rec["seq"]],
            )
            return


def check_stability(records: list[dict], report: AuditReport, quorum: int) -> None:
    """Once any one group holds a replica quorum of positive decision
    acks for (tid, d), no other outcome may ever be acked or applied."""
    stable: dict[str, tuple[str, int]] = {}  # tid -> (decision, seq at quorum)
    acks: dict[tuple[str, str, str], set] = {}  # (tid, group, decision) -> senders
    for rec in records:
        if rec["kind"] == "send" and rec.get("msg") == "phase2_ack" and "decision" in rec:
            tid, d = rec["tid"], rec["decision"]
            group = _shard_group(rec["src"])
            if group is None:
                continue
            got = stable.get(tid)
            if got is not None and got[0] != d:
                report.add(
                    "stability",
                    f"{tid} acked as {d} at seq {rec['seq']} after {got[0]} reached a quorum at seq {got[1]}",
                    tid=tid,
                    events=[got[1], rec["seq"]],
                )
                continue
            senders = acks.setdefault((tid, group, d), set())
            senders.add(rec["src"])
            if len(senders) >= quorum and got is None:
                stable[tid] = (d, rec["seq"])
        elif rec["kind"] == "apply":
            got = stable.get(rec["tid"])
            if got is not None and got[0] != rec["decision"]:
                report.add(
                    "stability",
                    f"{rec['tid']} applied as {rec['decision']} at seq {rec['seq']} after {got[0]} reached a quorum at seq {got[1]}",
                    tid=rec["tid"],
                    events=[got[1], rec["seq"]],
                )


def check_vote_immutability(records: list[dict], report: AuditReport) -> None:
    seen: dict[tuple[str, Optional[str]], tuple[str, int]] = {}
    for rec in records:
        vote = None
        if rec["kind"] == "vote":
            key = (rec["tid"], f"s{rec['shard']}")
            vote = rec["vote"]
        elif rec["kind"] == "send" and rec.get("msg") == "vote_replicate":
            key = (rec["tid"], _shard_group(rec["src"]))
            vote = rec.get("vote")
        if vote is None:
            continue
        prev = seen.get(key)
        if prev is not None and prev[0] != vote:
            report.add(
                "vote-immutability",
                f"vote for {key[0]} at {key[1]} changed from {prev[0]} to {vote}",
                tid=key[0],
                events=[prev[1], rec["seq"]],
            )
        seen.setdefault(key, (vote, rec["seq"]))


def check_two_phase_locking(records: list[dict], report: AuditReport) -> list[dict]:
    """Replay lock/unlock records per node against an independent 2PL
    compatibility model. Returns blocked-transaction findings."""
    readers: dict[tuple, set] = {}
    writer: dict[tuple, str] = {}
    held: dict[tuple[str, str], set] = {}  # (node, tid) -> keys
    for rec in records:
        if rec["kind"] == "crash":
            # the node's store dies with it; a restart comes back empty
            node = rec["node"]
            for spot in [s for s in readers if s[0] == node]:
                del readers[spot]
            for spot in [s for s in writer if s[0] == node]:
                del writer[spot]
            for owner in [o for o in held if o[0] == node]:
                del held[owner]
        elif rec["kind"] == "lock":
            spot = (rec["node"], rec["key"])
            tid = rec["tid"]
            w = writer.get(spot)
            r = readers.get(spot, set())
            if rec["mode"] == "read":
                allowed = w is None or w == tid
                if allowed and w is None:
                    readers.setdefault(spot, set()).add(tid)
            else:
                allowed = w == tid or (w is None and r <= {tid})
                if allowed:
                    readers.get(spot, set()).discard(tid)
                    writer[spot] = tid
            if allowed != rec.get("ok", False):
                report.add(
                    "two-phase-locking",
                    f"{rec['mode']} lock on {rec['key']} at {rec['node']} "
                    f"{'granted' if rec.get('ok') else 'denied'} but 2PL says "
                    f"{'grant' if allowed else 'deny'}",
                    tid=tid,
                    events=[rec["seq"]],
                )
            if rec.get("ok"):
                held.setdefault((rec["node"], tid), set()).add(rec["key"])
        elif rec["kind"] == "unlock":
            spot = (rec["node"], rec["key"])
            tid = rec["tid"]
            readers.get(spot, set()).discard(tid)
            if writer.get(spot) == tid:
                del writer[spot]
            keys = held.get((rec["node"], tid))
            if keys is not None:
                keys.discard(rec["key"])
                if not keys:
                    del held[(rec["node"], tid)]
    findings = []
    for (node, tid), keys in sorted(held.items()):
        findings.append({"node": node, "tid": tid, "keys": sorted(keys)})
    return findings


def check_dirty_reads(records: list[dict], report: AuditReport, meta: dict) -> None:
    """Every read must return a value that was the committed value of
    that key at that node when the read executed."""
    seed = meta.get("seed", 0)
    value_size = meta.get("value_size", 10)
    keys = load_keys(meta.get("key_space", 0))
    base = {k: initial_value(seed, k, value_size).hex() for k in keys}
    committed: dict[str, dict[str, str]] = {}
    for rec in records:
        if rec["kind"] == "read":
            node_state = committed.setdefault(rec["node"], dict(base))
            expect = node_state.get(rec["key"])
            got = rec.get("value")
            if got != expect:
                report.add(
                    "dirty-read",
                    f"read of {rec['key']} at {rec['node']} returned "
                    f"{got or 'absent'}, committed value was {expect or 'absent'}",
                    tid=rec["tid"],
                    events=[rec["seq"]],
                )
        elif rec["kind"] == "apply" and rec["decision"] == "commit":
            node_state = committed.setdefault(rec["node"], dict(base))
            for key, value_hex in rec.get("writes", []):
                node_state[key] = value_hex


def commit_delay_counts(records: list[dict]) -> dict[str, int]:
    """Message legs on each committed transaction's report chain: walk
    the cause links from the client report back to the root send."""
    send_by_mid = {rec["mid"]: rec for rec in records if rec["kind"] == "send"}
    out: dict[str, int] = {}
    for rec in records:
        if rec["kind"] != "client_report":
            continue
        legs = 0
        mid = rec.get("cause")
        while mid is not None:
            sender = send_by_mid.get(mid)
            if sender is None:
                break
            legs += 1
            mid = sender.get("cause")
        out[rec["tid"]] = legs
    return out


def check_delay_accounting(report: AuditReport, claimed: Optional[float]) -> None:
    if claimed is None or not report.delay_counts:
        return
    mean = sum(report.delay_counts.values()) / len(report.delay_counts)
    if abs(mean - claimed) > 1e-9:
        report.add(
            "delay-accounting",
            f"trace walk gives {mean:.3f} message delays per commit, metrics claim {claimed:.3f}",
        )


def audit_trace(records: list[dict], claimed_delays: Optional[float] = None) -> AuditReport:
    report = AuditReport()
    meta = _meta(records)
    quorum = meta.get("replicas", 3) // 2 + 1
    check_agreement(records, report)
    check_validity(records, report)
    check_stability(records, report, quorum)
    check_vote_immutability(records, report)
    blocked = check_two_phase_locking(records, report)
    check_dirty_reads(records, report, meta)
    report.delay_counts = commit_delay_counts(records)
    check_delay_accounting(report, claimed_delays)
    for b in blocked:
        report.find(
            "blocked",
            f"{b['tid']} still holds locks on {','.join(b['keys'])} at {b['node']} with no decision applied there",
            tid=b["tid"],
            node=b["node"],
        )
    return report
