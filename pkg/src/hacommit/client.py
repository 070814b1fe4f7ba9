"""Transaction client: coordinator library plus workload-driving actors.

The library surface is begin / execute / finish_execution / commit /
abort / status. A client owns one in-flight transaction per handle; it
is the sole proposer at ballot round zero, sends the decision straight
to every replica of every contacted shard, and reports the outcome as
soon as Phase2 acks arrive from a replica quorum of any one shard group
(the default policy), while retransmission keeps chasing the remaining
acks in the background.

Actors are written as generators. They yield ("sleep", us) or
("wait", key, timeout_us) and are resumed by the owning node when the
matching event fires, so all multi-step logic reads sequentially while
the simulator stays purely event-driven.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

from .config import ALL_QUORUMS, ANY_QUORUM, ProtocolConfig
from .core import (
    Ballot,
    Decision,
    ExecOp,
    LastOp,
    LastOpReply,
    Op,
    OpReply,
    Phase2,
    Phase2Ack,
    TxnContext,
    Vote,
    WriteCmd,
    client_ballot,
    fresh_txn_id,
)
from .topology import ShardMap


class CommitRefused(Exception):
    """commit() was invoked without a unanimous YES vote."""


EXECUTING = "executing"
VOTED = "voted"
DECIDING = "deciding"
ENDED = "ended"


@dataclass
class ClientTxn:
    """One transaction as seen by its client."""

    tid: str
    context: TxnContext
    phase: str = EXECUTING
    votes: dict[int, Vote] = field(default_factory=dict)
    acks: dict[str, set[str]] = field(default_factory=dict)
    decision: Optional[Decision] = None
    reported: bool = False
    superseded: bool = False
    commit_send_time: Optional[int] = None
    report_time: Optional[int] = None
    seq: int = 0
    retransmits: int = 0

    def next_seq(self) -> int:
        self.seq += 1
        return self.seq


class ClientNode:
    """Generator-driving node base with the transaction library."""

    def __init__(self, node_id: str, shard_map: ShardMap, cfg: ProtocolConfig) -> None:
        self.node_id = node_id
        self.shard_map = shard_map
        self.cfg = cfg
        self.txns: dict[str, ClientTxn] = {}
        self._gen = None
        self._wait_key = None
        self._wait_token = 0
        self.done = False

    # -- generator plumbing ---------------------------------------------------

    def start(self, sim) -> None:
        self._gen = self.session(sim)
        self._advance(sim, None)

    def session(self, sim):  # pragma: no cover - overridden by actors
        return iter(())

    def _advance(self, sim, value) -> None:
        gen = self._gen
        if gen is None:
            return
        try:
            cmd = gen.send(value)
        except StopIteration:
            self._gen = None
            self.done = True
            return
        self._wait_token += 1
        if cmd[0] == "sleep":
            self._wait_key = ("sleep", self._wait_token)
            sim.set_timer(self.node_id, cmd[1], "wake", self._wait_key)
        elif cmd[0] == "wait":
            _, key, timeout = cmd
            self._wait_key = key
            if timeout is not None:
                sim.set_timer(self.node_id, timeout, "wait_timeout", (key, self._wait_token))
        else:
            raise ValueError(f"bad actor command {cmd!r}")

    def _notify(self, sim, key, payload=None) -> None:
        if self._wait_key == key:
            self._wait_key = None
            self._advance(sim, ("ok", payload))

    def on_timer(self, sim, kind: str, data) -> None:
        if kind == "wake":
            if self._wait_key == data:
                self._wait_key = None
                self._advance(sim, ("ok", None))
        elif kind == "wait_timeout":
            key, token = data
            if self._wait_key == key and token == self._wait_token:
                self._wait_key = None
                self._advance(sim, ("timeout", None))
        elif kind == "retransmit":
            self._on_retransmit(sim, data)

    # -- message handling -------------------------------------------------------

    def on_message(self, sim, src: str, msg) -> None:
        if isinstance(msg, OpReply):
            self._notify(sim, ("opreply", msg.tid, msg.seq), msg)
        elif isinstance(msg, LastOpReply):
            self._on_last_op_reply(sim, src, msg)
        elif isinstance(msg, Phase2Ack):
            self._on_phase2_ack(sim, src, msg)

    def _on_last_op_reply(self, sim, src: str, m: LastOpReply) -> None:
        txn = self.txns.get(m.tid)
        if txn is None or txn.phase != EXECUTING:
            return
        group = self.shard_map.group_of(src)
        if group is None or not group.startswith("s"):
            return
        shard = int(group[1:])
        txn.votes[shard] = m.vote
        if set(txn.votes) >= set(txn.context.shard_ids):
            self._notify(sim, ("votes", m.tid))

    def _on_phase2_ack(self, sim, src: str, m: Phase2Ack) -> None:
        txn = self.txns.get(m.tid)
        if txn is None or txn.decision is None:
            return
        if m.ballot != client_ballot(self.node_id):
            # a recovery proposer preempted our round-zero ballot
            txn.superseded = True
            self._notify(sim, ("reported", m.tid), "superseded")
            return
        group = self.shard_map.group_of(src)
        if group is None:
            return
        txn.acks.setdefault(group, set()).add(src)
        if not txn.reported and self._report_reached(txn):
            txn.reported = True
            txn.report_time = sim.now
            if txn.decision is Decision.COMMIT:
                sim.record(
                    "client_report",
                    node=self.node_id,
                    tid=m.tid,
                    decision=txn.decision.value,
                    latency_us=sim.now - txn.commit_send_time,
                )
            self._notify(sim, ("reported", m.tid), "reported")
        if txn.phase == DECIDING and self._all_acked(txn):
            txn.phase = ENDED
            sim.record("ended", node=self.node_id, tid=m.tid, decision=txn.decision.value)

    def _report_reached(self, txn: ClientTxn) -> bool:
        groups = [self.shard_map.groups[f"s{s}"] for s in txn.context.shard_ids]
        if not groups:
            return True
        quorums = (len(txn.acks.get(g.name, ())) >= g.quorum_size for g in groups)
        if self.cfg.ack_policy == ALL_QUORUMS:
            return all(quorums)
        return any(quorums)

    def _all_acked(self, txn: ClientTxn) -> bool:
        for s in txn.context.shard_ids:
            g = self.shard_map.groups[f"s{s}"]
            if len(txn.acks.get(g.name, set())) < len(g.members):
                return False
        return True

    def _on_retransmit(self, sim, tid: str) -> None:
        txn = self.txns.get(tid)
        if txn is None or txn.phase != DECIDING or txn.superseded:
            return
        if txn.retransmits >= self.cfg.max_retransmits:
            return
        txn.retransmits += 1
        ctx = txn.context.at(sim.now)
        ballot = client_ballot(self.node_id)
        for s in txn.context.shard_ids:
            g = self.shard_map.groups[f"s{s}"]
            for node in g.members:
                if node not in txn.acks.get(g.name, set()):
                    sim.send(self.node_id, node, Phase2(tid, ballot, txn.decision, ctx), root=True)
        sim.set_timer(self.node_id, self.cfg.retransmit_interval_us, "retransmit", tid)

    # -- library surface ----------------------------------------------------------

    def begin(self, sim) -> ClientTxn:
        tid = fresh_txn_id(self.node_id, sim.rng_for(self.node_id, "txn_ids"))
        txn = ClientTxn(tid=tid, context=TxnContext(tid))
        self.txns[tid] = txn
        sim.record("begin", node=self.node_id, tid=tid)
        return txn

    def execute(self, sim, txn: ClientTxn, op: Op):
        """Route one operation to its shard leader; on growth of the
        shard set, refresh the context at every previously contacted
        leader. Yields until the reply (or timeout) arrives."""
        assert txn.phase == EXECUTING, f"execute in phase {txn.phase}"
        shard = self.shard_map.key_to_shard(op.key)
        prior = txn.context.shard_ids
        grew = shard not in prior
        ctx = txn.context.with_shard(shard)
        if op.kind == "write":
            ctx = ctx.with_write(WriteCmd(shard, op.key, op.value))
        txn.context = ctx
        seq = txn.next_seq()
        stamped = ctx.at(sim.now)
        sim.send(self.node_id, self.shard_map.leader_of(shard), ExecOp(txn.tid, seq, op, stamped))
        if grew:
            for s in prior:
                sim.send(self.node_id, self.shard_map.leader_of(s), ExecOp(txn.tid, seq, None, stamped))
        res = yield ("wait", ("opreply", txn.tid, seq), self.cfg.reply_timeout_us)
        if res[0] == "timeout":
            return ("timeout", None)
        reply: OpReply = res[1]
        return (reply.status, reply.value)

    def finish_execution(self, sim, txn: ClientTxn, final_op: Optional[Op]):
        """Send the real last operation to its shard and an empty last
        operation to every other contacted shard, then wait for every
        leader's vote. The final op may be a read, a write, or nothing
        at all (a pure prepare round)."""
        assert txn.phase == EXECUTING, f"finish_execution in phase {txn.phase}"
        final_shard = None
        if final_op is not None:
            final_shard = self.shard_map.key_to_shard(final_op.key)
            ctx = txn.context.with_shard(final_shard)
            if final_op.kind == "write":
                ctx = ctx.with_write(WriteCmd(final_shard, final_op.key, final_op.value))
            txn.context = ctx
        if not txn.context.shard_ids:
            txn.phase = VOTED
            return {}
        stamped = txn.context.at(sim.now)
        for s in txn.context.shard_ids:
            op = final_op if s == final_shard else None
            sim.send(self.node_id, self.shard_map.leader_of(s), LastOp(txn.tid, txn.next_seq(), op, stamped))
        res = yield ("wait", ("votes", txn.tid), self.cfg.reply_timeout_us)
        if res[0] == "timeout":
            return None
        txn.phase = VOTED
        return dict(txn.votes)

    def commit(self, sim, txn: ClientTxn):
        """Propose COMMIT at ballot (0, client) to every replica of every
        contacted shard. Returns "committed" once a quorum of any one
        group acked, "in-doubt" otherwise."""
        if txn.phase != VOTED:
            raise CommitRefused(f"commit in phase {txn.phase}")
        if any(v is not Vote.YES for v in txn.votes.values()) or set(txn.votes) < set(txn.context.shard_ids):
            raise CommitRefused(f"commit without unanimous YES votes: {txn.votes}")
        txn.decision = Decision.COMMIT
        txn.phase = DECIDING
        txn.commit_send_time = sim.now
        sim.record("decide", node=self.node_id, tid=txn.tid, decision="commit")
        if not txn.context.shard_ids:
            txn.phase = ENDED
            txn.reported = True
            txn.report_time = sim.now
            return "committed"
        self._fan_out_decision(sim, txn)
        res = yield ("wait", ("reported", txn.tid), self.cfg.reply_timeout_us)
        if res[0] == "timeout" or res[1] == "superseded":
            return "in-doubt"
        return "committed"

    def abort(self, sim, txn: ClientTxn) -> str:
        """Decide ABORT and fan it out. Never waits: an ABORT at ballot
        zero can only ever be confirmed (recovery defaults to ABORT), so
        the caller may retry immediately."""
        if txn.phase == ENDED:
            return "aborted"
        txn.decision = Decision.ABORT
        txn.phase = DECIDING
        txn.commit_send_time = sim.now
        sim.record("decide", node=self.node_id, tid=txn.tid, decision="abort")
        if not txn.context.shard_ids:
            txn.phase = ENDED
            return "aborted"
        self._fan_out_decision(sim, txn)
        return "aborted"

    def _fan_out_decision(self, sim, txn: ClientTxn) -> None:
        ballot = client_ballot(self.node_id)
        ctx = txn.context.at(sim.now)
        for node in self.shard_map.all_replicas(txn.context.shard_ids):
            sim.send(self.node_id, node, Phase2(txn.tid, ballot, txn.decision, ctx), root=True)
        sim.set_timer(self.node_id, self.cfg.retransmit_interval_us, "retransmit", txn.tid)

    def status(self, txn: ClientTxn) -> dict:
        return {
            "tid": txn.tid,
            "phase": txn.phase,
            "decision": txn.decision.value if txn.decision else None,
            "reported": txn.reported,
            "superseded": txn.superseded,
            "votes": {s: v.value for s, v in txn.votes.items()},
        }


def drive_workload(node: "ClientNode", sim):
    """Closed-loop session over any client flavor: run the node's
    transaction stream, aborting and retrying on conflict after a
    randomized back-off. In-doubt outcomes are never retried (blind
    retry could double-apply)."""
    rng = sim.rng_for(node.node_id, "workload")
    for spec in node.stream:
        ops = spec.ops
        node.metrics.add_issued()
        while True:
            if node.think_time_us:
                yield ("sleep", node.think_time_us)
            txn = node.begin(sim)
            ok = True
            for op in ops[:-1]:
                status, _ = yield from node.execute(sim, txn, op)
                if status != "ok":
                    ok = False
                    break
            votes = None
            if ok:
                votes = yield from node.finish_execution(sim, txn, ops[-1])
                if votes is None or any(v is not Vote.YES for v in votes.values()):
                    ok = False
            if ok:
                outcome = yield from node.commit(sim, txn)
                if outcome == "committed":
                    node.metrics.add_commit(txn.tid, txn.report_time, txn.report_time - txn.commit_send_time)
                    break
                node.metrics.add_in_doubt(txn.tid)
                break
            node.abort(sim, txn)
            node.metrics.add_retry()
            backoff = int(rng.uniform(node.cfg.backoff_lo_rtt, node.cfg.backoff_hi_rtt) * node.cfg.rtt_us)
            yield ("sleep", max(backoff, 1))


class WorkloadClient(ClientNode):
    """One-phase-commit workload actor."""

    def __init__(self, node_id, shard_map, cfg, stream, metrics, think_time_us: int = 0) -> None:
        super().__init__(node_id, shard_map, cfg)
        self.stream = stream
        self.metrics = metrics
        self.think_time_us = think_time_us

    def session(self, sim):
        yield from drive_workload(self, sim)
