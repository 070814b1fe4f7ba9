"""Two-phase-commit baselines over the same store and simulator.

Two variants share the message pattern prepare -> vote -> decision ->
ack, differing in how records are made durable:

- plain 2PC: every participant forces a log record before voting and
  the coordinator forces its decision record before broadcasting; the
  forced-log latency is modeled, not performed. There is no replication
  and no recovery: a coordinator crash between the phases leaves the
  participants holding their locks, which the auditor reports.

- replicated 2PC: forced logs are replaced by quorum replication, of
  the prepare record within each participant group and of the decision
  record within the coordinator group (the client leads it). A backup
  coordinator that holds a replicated decision record finishes the
  broadcast if the client crashes.

Commit latency is measured from the prepare fan-out, so it covers both
phases; the one-phase protocol's measurement starts at its decision
fan-out because voting already happened during the last operation.
"""
from __future__ import annotations

from typing import Optional

from .client import ClientNode, ClientTxn, CommitRefused, DECIDING, ENDED, EXECUTING, VOTED, drive_workload
from .config import ProtocolConfig
from .core import (
    Decision,
    DecisionAck,
    DecisionMsg,
    ExecOp,
    Op,
    Prepare,
    PrepareVote,
    ReplicateRec,
    ReplicateRecAck,
    TxnContext,
    Vote,
)
from .participant import ParticipantReplica, ProtocolViolation
from .topology import COORD_GROUP, ShardMap


class TpcParticipant(ParticipantReplica):
    """Single-copy 2PC participant. Reuses the execution path of the
    replica state machine; everything after execution is plain 2PC with
    a modeled forced log and no recovery machinery at all."""

    def __init__(self, node_id, shard, shard_map, store, cfg) -> None:
        super().__init__(node_id, shard, shard_map, store, cfg)
        self._log_pending: set[str] = set()

    def _arm_scan(self, sim) -> None:
        # no unended-transaction detection: blocking is the point
        return

    def on_message(self, sim, src: str, msg) -> None:
        if isinstance(msg, ExecOp):
            self.handle_exec_op(sim, src, msg)
        elif isinstance(msg, Prepare):
            self.handle_prepare(sim, src, msg)
        elif isinstance(msg, DecisionMsg):
            self.handle_decision(sim, src, msg)

    def on_timer(self, sim, kind: str, data) -> None:
        if kind == "log_done":
            self._on_log_done(sim, data)

    def handle_prepare(self, sim, src: str, m: Prepare) -> None:
        if self.learner_only:
            return
        st = self._state(m.tid, sim.now)
        st.context = m.config
        st.client = src
        st.last_contact = sim.now
        if st.vote is not None:
            if st.vote_replied:
                sim.send(self.node_id, src, PrepareVote(m.tid, self.shard, st.vote))
            return
        vote = Vote.YES if not st.exec_failed and self.store.check_vote(m.tid) else Vote.NO
        st.vote = vote
        sim.record("vote", node=self.node_id, tid=m.tid, shard=self.shard, vote=vote.value)
        self._make_vote_durable(sim, st)

    def _make_vote_durable(self, sim, st) -> None:
        """Force the prepare log record, then vote. NO votes skip the
        log: there is nothing to redo."""
        if st.vote is Vote.NO:
            self._vote_ready(sim, st, log_us=0)
            return
        cost = self.cfg.log_cost_us(st.context.write_count(self.shard))
        self._log_pending.add(st.tid)
        sim.set_timer(self.node_id, cost, "log_done", (st.tid, cost))

    def _on_log_done(self, sim, data) -> None:
        tid, cost = data
        self._log_pending.discard(tid)
        st = self.states.get(tid)
        if st is None or st.vote_replied:
            return
        self._vote_ready(sim, st, log_us=cost)

    def _vote_ready(self, sim, st, log_us: int) -> None:
        st.vote_replied = True
        sim.record("prepared", node=self.node_id, tid=st.tid, shard=self.shard, vote=st.vote.value, log_us=log_us)
        sim.send(self.node_id, st.client, PrepareVote(st.tid, self.shard, st.vote))

    def handle_decision(self, sim, src: str, m: DecisionMsg) -> None:
        if self.learner_only:
            return
        st = self._state(m.tid, sim.now)
        if st.context is None:
            st.context = m.config
        if st.applied is None:
            self._apply_baseline(sim, st, m.decision, m.config)
        elif st.applied is not m.decision:
            raise ProtocolViolation(f"{m.tid}: decision {m.decision} after {st.applied} was applied")
        if self.shard_map.group_of(src) == self.group.name:
            return  # forwarded by our own leader; nothing to confirm
        sim.send(self.node_id, src, DecisionAck(m.tid))
        if self.is_leader():
            for member in self.group.members:
                if member != self.node_id:
                    sim.send(self.node_id, member, DecisionMsg(m.tid, m.decision, m.config))

    def _apply_baseline(self, sim, st, decision: Decision, ctx: TxnContext) -> None:
        writes = [(w.key, w.value) for w in ctx.writes_for(self.shard)]
        held = self.store.locks.held_keys(st.tid)
        self.store.apply_decision(st.tid, decision, writes)
        st.applied = decision
        sim.record(
            "apply",
            node=self.node_id,
            tid=st.tid,
            shard=self.shard,
            decision=decision.value,
            writes=[[k, v.hex()] for k, v in writes] if decision is Decision.COMMIT else [],
            msg="decision_applied",
        )
        for key in sorted(held):
            sim.record("unlock", node=self.node_id, tid=st.tid, key=key)


class RcParticipant(TpcParticipant):
    """Replicated-2PC participant leader/member: the prepare record is
    quorum-replicated within the group instead of force-logged."""

    def __init__(self, node_id, shard, shard_map, store, cfg) -> None:
        super().__init__(node_id, shard, shard_map, store, cfg)
        self._rep_acks: dict[str, set[str]] = {}

    def on_message(self, sim, src: str, msg) -> None:
        if isinstance(msg, ReplicateRec):
            self.handle_replicate_rec(sim, src, msg)
        elif isinstance(msg, ReplicateRecAck):
            self.handle_rec_ack(sim, src, msg)
        else:
            super().on_message(sim, src, msg)

    def on_timer(self, sim, kind: str, data) -> None:
        if kind == "rep_done":
            tid, rec_kind, dst = data
            sim.send(self.node_id, dst, ReplicateRecAck(tid, rec_kind))
        else:
            super().on_timer(sim, kind, data)

    def _make_vote_durable(self, sim, st) -> None:
        if st.vote is Vote.NO:
            self._vote_ready(sim, st, log_us=0)
            return
        others = [n for n in self.group.members if n != self.node_id]
        if not others:
            self._vote_ready(sim, st, log_us=0)
            return
        self._rep_acks[st.tid] = {self.node_id}
        entries = st.context.write_count(self.shard)
        ctx = st.context.at(sim.now)
        for member in others:
            sim.send(
                self.node_id,
                member,
                ReplicateRec(st.tid, self.group.name, "prepare", entries, vote=st.vote, config=ctx),
            )

    def handle_replicate_rec(self, sim, src: str, m: ReplicateRec) -> None:
        if self.learner_only:
            return
        st = self._state(m.tid, sim.now)
        st.vote = m.vote
        st.context = m.config
        st.last_contact = sim.now
        # the ack waits out the modeled replication work
        sim.set_timer(self.node_id, self.cfg.rep_cost_us(m.entries), "rep_done", (m.tid, m.rec_kind, src))

    def handle_rec_ack(self, sim, src: str, m: ReplicateRecAck) -> None:
        acks = self._rep_acks.get(m.tid)
        st = self.states.get(m.tid)
        if acks is None or st is None or st.vote_replied:
            return
        acks.add(src)
        if len(acks) >= self.group.quorum_size:
            del self._rep_acks[m.tid]
            self._vote_ready(sim, st, log_us=0)


class RcCoordBackup:
    """Coordinator-group member: stores replicated decision records and
    finishes the broadcast when the coordinator dies before it could."""

    def __init__(self, node_id: str, shard_map: ShardMap, cfg: ProtocolConfig) -> None:
        self.node_id = node_id
        self.shard_map = shard_map
        self.cfg = cfg
        self.records: dict[str, tuple[Decision, TxnContext, str]] = {}

    def on_message(self, sim, src: str, msg) -> None:
        if isinstance(msg, ReplicateRec) and msg.rec_kind == "decision":
            self.records[msg.tid] = (msg.decision, msg.config, src)
            sim.set_timer(self.node_id, self.cfg.rep_cost_us(msg.entries), "rep_done", (msg.tid, src))
            sim.set_timer(self.node_id, self.cfg.reply_timeout_us, "takeover_check", msg.tid)

    def on_timer(self, sim, kind: str, data) -> None:
        if kind == "rep_done":
            tid, src = data
            sim.send(self.node_id, src, ReplicateRecAck(tid, "decision"))
        elif kind == "takeover_check":
            self._maybe_take_over(sim, data)

    def _maybe_take_over(self, sim, tid: str) -> None:
        rec = self.records.get(tid)
        if rec is None:
            return
        decision, ctx, coordinator = rec
        if coordinator not in sim.crashed:
            return
        sim.record("takeover", node=self.node_id, tid=tid, decision=decision.value)
        for node in self.shard_map.all_replicas(ctx.shard_ids):
            sim.send(self.node_id, node, DecisionMsg(tid, decision, ctx), root=True)


class TpcClient(ClientNode):
    """2PC coordinator. Execution reuses the base client; the commit
    path is prepare/vote/log/decision/ack with latency measured from the
    prepare fan-out."""

    def on_message(self, sim, src: str, msg) -> None:
        if isinstance(msg, PrepareVote):
            self._on_prepare_vote(sim, src, msg)
        elif isinstance(msg, DecisionAck):
            self._on_decision_ack(sim, src, msg)
        else:
            super().on_message(sim, src, msg)

    def _on_prepare_vote(self, sim, src: str, m: PrepareVote) -> None:
        txn = self.txns.get(m.tid)
        if txn is None or txn.phase != EXECUTING:
            return
        txn.votes[m.shard] = m.vote
        if set(txn.votes) >= set(txn.context.shard_ids):
            self._notify(sim, ("votes", m.tid))

    def _on_decision_ack(self, sim, src: str, m: DecisionAck) -> None:
        txn = self.txns.get(m.tid)
        if txn is None or txn.decision is None:
            return
        group = self.shard_map.group_of(src)
        if group is None:
            return
        txn.acks.setdefault(group, set()).add(src)
        if txn.reported or not self._leaders_acked(txn):
            return
        txn.reported = True
        txn.report_time = sim.now
        txn.phase = ENDED
        if txn.decision is Decision.COMMIT:
            sim.record(
                "client_report",
                node=self.node_id,
                tid=m.tid,
                decision=txn.decision.value,
                latency_us=sim.now - txn.commit_send_time,
            )
        sim.record("ended", node=self.node_id, tid=m.tid, decision=txn.decision.value)
        self._notify(sim, ("reported", m.tid), "reported")

    def _leaders_acked(self, txn: ClientTxn) -> bool:
        for s in txn.context.shard_ids:
            g = self.shard_map.shard_group(s)
            if not (txn.acks.get(g.name, set()) & set(g.members)):
                return False
        return True

    def finish_execution(self, sim, txn: ClientTxn, final_op: Optional[Op]):
        assert txn.phase == EXECUTING, f"finish_execution in phase {txn.phase}"
        if final_op is not None:
            status, _ = yield from self.execute(sim, txn, final_op)
            if status != "ok":
                return None
        if not txn.context.shard_ids:
            txn.phase = VOTED
            return {}
        txn.commit_send_time = sim.now
        ctx = txn.context.at(sim.now)
        for s in txn.context.shard_ids:
            sim.send(self.node_id, self.shard_map.leader_of(s), Prepare(txn.tid, ctx), root=True)
        res = yield ("wait", ("votes", txn.tid), self.cfg.reply_timeout_us)
        if res[0] == "timeout":
            return None
        txn.phase = VOTED
        return dict(txn.votes)

    def commit(self, sim, txn: ClientTxn):
        if txn.phase != VOTED:
            raise CommitRefused(f"commit in phase {txn.phase}")
        if any(v is not Vote.YES for v in txn.votes.values()) or set(txn.votes) < set(txn.context.shard_ids):
            raise CommitRefused(f"commit without unanimous YES votes: {txn.votes}")
        txn.decision = Decision.COMMIT
        txn.phase = DECIDING
        sim.record("decide", node=self.node_id, tid=txn.tid, decision="commit")
        if not txn.context.shard_ids:
            txn.phase = ENDED
            txn.reported = True
            txn.report_time = sim.now
            return "committed"
        yield from self._decision_durable(sim, txn)
        self._send_decision(sim, txn)
        sim.set_timer(self.node_id, self.cfg.retransmit_interval_us, "retransmit", txn.tid)
        res = yield ("wait", ("reported", txn.tid), self.cfg.reply_timeout_us)
        if res[0] == "timeout":
            return "in-doubt"
        return "committed"

    def _decision_durable(self, sim, txn: ClientTxn):
        # coordinator forces its decision record: one log entry
        yield ("sleep", self.cfg.log_cost_us(1))

    def abort(self, sim, txn: ClientTxn) -> str:
        if txn.phase == ENDED:
            return "aborted"
        txn.decision = Decision.ABORT
        txn.phase = DECIDING
        txn.commit_send_time = sim.now
        sim.record("decide", node=self.node_id, tid=txn.tid, decision="abort")
        if not txn.context.shard_ids:
            txn.phase = ENDED
            return "aborted"
        self._send_decision(sim, txn, root=True)
        sim.set_timer(self.node_id, self.cfg.retransmit_interval_us, "retransmit", txn.tid)
        return "aborted"

    def _send_decision(self, sim, txn: ClientTxn, root: bool = False) -> None:
        ctx = txn.context.at(sim.now)
        for s in txn.context.shard_ids:
            sim.send(self.node_id, self.shard_map.leader_of(s), DecisionMsg(txn.tid, txn.decision, ctx), root=root)

    def _on_retransmit(self, sim, tid: str) -> None:
        txn = self.txns.get(tid)
        if txn is None or txn.phase != DECIDING:
            return
        if txn.retransmits >= self.cfg.max_retransmits:
            return
        txn.retransmits += 1
        ctx = txn.context.at(sim.now)
        for s in txn.context.shard_ids:
            g = self.shard_map.shard_group(s)
            if not (txn.acks.get(g.name, set()) & set(g.members)):
                sim.send(self.node_id, g.leader, DecisionMsg(tid, txn.decision, ctx), root=True)
        sim.set_timer(self.node_id, self.cfg.retransmit_interval_us, "retransmit", tid)


class RcClient(TpcClient):
    """Replicated-2PC coordinator: leads the coordinator group, making
    the decision durable by quorum replication to its backups before
    broadcasting it to the participant leaders."""

    def __init__(self, node_id, shard_map, cfg, backups: tuple[str, ...] = ()) -> None:
        super().__init__(node_id, shard_map, cfg)
        self.backups = tuple(backups)
        self._dec_acks: dict[str, set[str]] = {}

    def on_message(self, sim, src: str, msg) -> None:
        if isinstance(msg, ReplicateRecAck) and msg.rec_kind == "decision":
            self._on_dec_rep_ack(sim, src, msg)
        else:
            super().on_message(sim, src, msg)

    def _on_dec_rep_ack(self, sim, src: str, m: ReplicateRecAck) -> None:
        acks = self._dec_acks.get(m.tid)
        if acks is None:
            return
        acks.add(src)
        # the coordinator group is this client plus its backups
        quorum = (len(self.backups) + 1) // 2 + 1
        if len(acks) >= quorum:
            del self._dec_acks[m.tid]
            self._notify(sim, ("dec_durable", m.tid))

    def _decision_durable(self, sim, txn: ClientTxn):
        if not self.backups:
            return
        self._dec_acks[txn.tid] = {self.node_id}
        ctx = txn.context.at(sim.now)
        for b in self.backups:
            sim.send(
                self.node_id,
                b,
                ReplicateRec(txn.tid, COORD_GROUP, "decision", 1, decision=txn.decision, config=ctx),
            )
        res = yield ("wait", ("dec_durable", txn.tid), self.cfg.reply_timeout_us)
        if res[0] == "timeout":
            self._dec_acks.pop(txn.tid, None)


class TpcWorkloadClient(TpcClient):
    """2PC workload actor."""

    def __init__(self, node_id, shard_map, cfg, stream, metrics, think_time_us: int = 0) -> None:
        super().__init__(node_id, shard_map, cfg)
        self.stream = stream
        self.metrics = metrics
        self.think_time_us = think_time_us

    def session(self, sim):
        yield from drive_workload(self, sim)


class RcWorkloadClient(RcClient):
    """Replicated-2PC workload actor."""

    def __init__(self, node_id, shard_map, cfg, stream, metrics, backups=(), think_time_us: int = 0) -> None:
        super().__init__(node_id, shard_map, cfg, backups=backups)
        self.stream = stream
        self.metrics = metrics
        self.think_time_us = think_time_us

    def session(self, sim):
        yield from drive_workload(self, sim)
