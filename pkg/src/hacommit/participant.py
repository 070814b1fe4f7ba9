"""Participant replica state machine.

A participant leader executes operations under the local lock table,
votes while processing a transaction's last operation, and replicates
the vote together with the transaction context to a quorum of its group
before replying to the client. Every replica doubles as a Paxos
acceptor for each transaction's decision, and as a recovery proposer
once an unended transaction's silence exceeds the timeout.

Handlers never block. Multi-step flows (vote replication, recovery
rounds) live in per-transaction continuation state.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .config import CONSISTENT, ProtocolConfig
from .core import (
    Ballot,
    Decision,
    ExecOp,
    LastOp,
    LastOpReply,
    Op,
    OpReplicate,
    OpReplicateAck,
    OpReply,
    Phase1,
    Phase1Reply,
    Phase2,
    Phase2Ack,
    TxnContext,
    Vote,
    VoteReplicate,
    VoteReplicateAck,
)
from .store import KVStore, READ, SERIALIZABLE, WRITE
from .topology import ShardMap


class ProtocolViolation(Exception):
    """An internal invariant broke (for example a vote changed after it
    was replicated). Fails fast instead of corrupting the run."""


@dataclass
class RecoveryRound:
    """One proposer's attempt to finish somebody else's transaction."""

    ballot: Ballot
    targets: tuple[str, ...]
    groups: tuple[str, ...]
    phase: int = 1
    promises: dict = field(default_factory=dict)  # group -> set of nodes
    best_ballot: Optional[Ballot] = None
    best_decision: Optional[Decision] = None
    decision: Optional[Decision] = None
    acks: dict = field(default_factory=dict)  # group -> set of nodes


@dataclass
class AcceptorState:
    """Per-transaction state at one replica: acceptor fields plus the
    leader-side execution/vote bookkeeping."""

    tid: str
    promised: Optional[Ballot] = None
    accepted_ballot: Optional[Ballot] = None
    accepted_decision: Optional[Decision] = None
    vote: Optional[Vote] = None
    context: Optional[TxnContext] = None
    last_contact: int = 0
    applied: Optional[Decision] = None
    applied_ballot: Optional[Ballot] = None
    # leader-side bookkeeping
    client: Optional[str] = None
    exec_failed: bool = False
    last_op_status: str = "ok"
    last_op_value: Optional[bytes] = None
    vote_acks: set = field(default_factory=set)
    vote_replied: bool = False
    # repair bookkeeping
    repair_pending: bool = False
    recovery: Optional[RecoveryRound] = None


class ParticipantReplica:
    """One replica of one shard, addressed as its own simulated node."""

    def __init__(
        self,
        node_id: str,
        shard: int,
        shard_map: ShardMap,
        store: KVStore,
        cfg: ProtocolConfig,
    ) -> None:
        self.node_id = node_id
        self.shard = shard
        self.shard_map = shard_map
        self.group = shard_map.shard_group(shard)
        self.store = store
        self.cfg = cfg
        self.states: dict[str, AcceptorState] = {}
        # applied decisions survive bookkeeping GC; without them a
        # recovery quorum made of GC'd acceptors could re-decide
        self.finished: dict[str, tuple[Ballot, Decision]] = {}
        self.highest_round: dict[str, int] = {}
        self.learner_only = False
        self._scan_armed = False
        self._pending_op_repl: dict[tuple[str, int], dict] = {}

    # -- plumbing ------------------------------------------------------------

    def _state(self, tid: str, now: int) -> AcceptorState:
        st = self.states.get(tid)
        if st is None:
            st = AcceptorState(tid=tid, last_contact=now)
            self.states[tid] = st
        return st

    def _note_round(self, tid: str, ballot: Ballot) -> None:
        if ballot.round > self.highest_round.get(tid, 0):
            self.highest_round[tid] = ballot.round

    def is_leader(self) -> bool:
        return self.shard_map.leader_of(self.shard) == self.node_id

    def _arm_scan(self, sim) -> None:
        if not self._scan_armed and not self.learner_only:
            self._scan_armed = True
            sim.set_timer(self.node_id, self.cfg.scan_period_us, "scan")

    def on_restart(self, sim) -> None:
        """Crash-stop semantics: the node returns empty and passive. It
        neither votes, promises, acks, nor applies; with no state
        transfer an amnesiac acceptor would break agreement."""
        self.learner_only = True
        self.states = {}
        self.finished = {}
        self.highest_round = {}
        self.store = KVStore(vote_check=self.store.vote_check)
        self._pending_op_repl = {}

    # -- dispatch --------------------------------------------------------------

    def on_message(self, sim, src: str, msg) -> None:
        if isinstance(msg, ExecOp):
            self.handle_exec_op(sim, src, msg)
        elif isinstance(msg, LastOp):
            self.handle_last_op(sim, src, msg)
        elif isinstance(msg, VoteReplicate):
            self.handle_vote_replicate(sim, src, msg)
        elif isinstance(msg, VoteReplicateAck):
            self.handle_vote_replicate_ack(sim, src, msg)
        elif isinstance(msg, OpReplicate):
            self.handle_op_replicate(sim, src, msg)
        elif isinstance(msg, OpReplicateAck):
            self.handle_op_replicate_ack(sim, src, msg)
        elif isinstance(msg, Phase1):
            self.handle_phase1(sim, src, msg)
        elif isinstance(msg, Phase1Reply):
            self.handle_phase1_reply(sim, src, msg)
        elif isinstance(msg, Phase2):
            self.handle_phase2(sim, src, msg)
        elif isinstance(msg, Phase2Ack):
            self.handle_phase2_ack(sim, src, msg)

    def on_timer(self, sim, kind: str, data) -> None:
        if kind == "scan":
            self._on_scan(sim)
        elif kind == "repair":
            self._on_repair_timer(sim, data)
        elif kind == "recovery_check":
            self._on_recovery_check(sim, data)
        elif kind == "phase2_ack":
            tid, ballot, dst, decision = data
            sim.send(self.node_id, dst, Phase2Ack(tid, ballot), extra={"decision": decision.value})
        elif kind == "gc":
            self._on_gc(data)

    # -- execution phase -------------------------------------------------------

    def handle_exec_op(self, sim, src: str, m: ExecOp) -> None:
        if self.learner_only:
            return
        st = self._state(m.tid, sim.now)
        st.context = m.config
        st.last_contact = sim.now
        st.client = src
        self._arm_scan(sim)
        if m.op is None:
            return  # pure context refresh
        if not self.is_leader():
            return  # stale routing; the client's timeout handles it
        status, value = self._execute(sim, st, m.op)
        if (
            status == "ok"
            and m.op.kind == "write"
            and self.cfg.replication_mode == CONSISTENT
            and self.group.quorum_size > 1
        ):
            pending = {"need": self.group.quorum_size - 1, "got": set(), "client": src}
            self._pending_op_repl[(m.tid, m.seq)] = pending
            for member in self.group.members:
                if member != self.node_id:
                    sim.send(self.node_id, member, OpReplicate(m.tid, m.seq, self.shard, m.op.key, m.op.value))
            return
        sim.send(self.node_id, src, OpReply(m.tid, m.seq, status, value))

    def _execute(self, sim, st: AcceptorState, op: Op) -> tuple[str, Optional[bytes]]:
        tid = st.tid
        if op.kind == "read":
            if self.cfg.isolation == SERIALIZABLE:
                ok = self.store.acquire(tid, op.key, READ)
                sim.record("lock", node=self.node_id, tid=tid, key=op.key, mode=READ, ok=ok)
                if not ok:
                    st.exec_failed = True
                    return ("conflict", None)
            value = self.store.read(tid, op.key, self.cfg.isolation)
            sim.record(
                "read",
                node=self.node_id,
                tid=tid,
                key=op.key,
                value=value.hex() if value is not None else None,
                absent=True if value is None else None,
                isolation=self.cfg.isolation,
            )
            return ("ok", value)
        if op.kind == "write":
            ok = self.store.acquire(tid, op.key, WRITE)
            sim.record("lock", node=self.node_id, tid=tid, key=op.key, mode=WRITE, ok=ok)
            if not ok:
                st.exec_failed = True
                return ("conflict", None)
            self.store.stage_write(tid, op.key, op.value)
            sim.record("stage", node=self.node_id, tid=tid, key=op.key)
            return ("ok", None)
        raise ValueError(f"unknown op kind {op.kind!r}")

    def handle_op_replicate(self, sim, src: str, m: OpReplicate) -> None:
        if self.learner_only:
            return
        st = self._state(m.tid, sim.now)
        st.last_contact = sim.now
        sim.send(self.node_id, src, OpReplicateAck(m.tid, m.seq))

    def handle_op_replicate_ack(self, sim, src: str, m: OpReplicateAck) -> None:
        pending = self._pending_op_repl.get((m.tid, m.seq))
        if pending is None:
            return
        pending["got"].add(src)
        if len(pending["got"]) >= pending["need"]:
            del self._pending_op_repl[(m.tid, m.seq)]
            sim.send(self.node_id, pending["client"], OpReply(m.tid, m.seq, "ok", None))

    # -- vote phase ------------------------------------------------------------

    def handle_last_op(self, sim, src: str, m: LastOp) -> None:
        if self.learner_only:
            return
        st = self._state(m.tid, sim.now)
        st.context = m.config
        st.last_contact = sim.now
        st.client = src
        self._arm_scan(sim)
        if not self.is_leader():
            return
        if st.vote is not None:
            # duplicate last-op: the vote is immutable, just help the client
            if st.vote_replied:
                sim.send(self.node_id, src, LastOpReply(m.tid, st.vote, st.last_op_status, st.last_op_value))
            return
        status, value = ("ok", None)
        if m.op is not None:
            status, value = self._execute(sim, st, m.op)
        vote = (
            Vote.YES
            if status == "ok" and not st.exec_failed and self.store.check_vote(m.tid)
            else Vote.NO
        )
        st.vote = vote
        st.last_op_status = status
        st.last_op_value = value
        st.vote_acks = {self.node_id}
        sim.record("vote", node=self.node_id, tid=m.tid, shard=self.shard, vote=vote.value)
        others = [n for n in self.group.members if n != self.node_id]
        if len(st.vote_acks) >= self.group.quorum_size or not others:
            st.vote_replied = True
            sim.send(self.node_id, src, LastOpReply(m.tid, vote, status, value))
            return
        ctx = st.context.at(sim.now)
        for member in others:
            sim.send(self.node_id, member, VoteReplicate(m.tid, vote, ctx))

    def handle_vote_replicate(self, sim, src: str, m: VoteReplicate) -> None:
        if self.learner_only:
            return
        st = self._state(m.tid, sim.now)
        if st.vote is not None and st.vote is not m.vote:
            raise ProtocolViolation(f"vote for {m.tid} changed from {st.vote} to {m.vote} at {self.node_id}")
        st.vote = m.vote
        st.context = m.context
        st.last_contact = sim.now
        self._arm_scan(sim)
        sim.send(self.node_id, src, VoteReplicateAck(m.tid))

    def handle_vote_replicate_ack(self, sim, src: str, m: VoteReplicateAck) -> None:
        st = self.states.get(m.tid)
        if st is None or st.vote_replied or st.vote is None or st.client is None:
            return
        st.vote_acks.add(src)
        if len(st.vote_acks) >= self.group.quorum_size:
            st.vote_replied = True
            sim.send(self.node_id, st.client, LastOpReply(m.tid, st.vote, st.last_op_status, st.last_op_value))

    # -- acceptor --------------------------------------------------------------

    def handle_phase1(self, sim, src: str, m: Phase1) -> None:
        self._note_round(m.tid, m.ballot)
        if self.learner_only:
            return
        fin = self.finished.get(m.tid)
        if fin is not None:
            sim.send(
                self.node_id,
                src,
                Phase1Reply(m.tid, promised=m.ballot, accepted_ballot=fin[0], accepted_decision=fin[1]),
            )
            return
        st = self._state(m.tid, sim.now)
        if st.promised is None or m.ballot >= st.promised:
            st.promised = m.ballot
        acc_b, acc_d = st.accepted_ballot, st.accepted_decision
        if st.applied is not None:
            acc_b, acc_d = st.applied_ballot, st.applied
        sim.send(
            self.node_id,
            src,
            Phase1Reply(m.tid, promised=st.promised, accepted_ballot=acc_b, accepted_decision=acc_d),
        )

    def handle_phase2(self, sim, src: str, m: Phase2) -> None:
        self._note_round(m.tid, m.ballot)
        if self.learner_only:
            return
        fin = self.finished.get(m.tid)
        if fin is not None:
            if m.ballot < fin[0]:
                # stale proposal from before the applied decision: NACK
                sim.send(self.node_id, src, Phase2Ack(m.tid, fin[0]))
                return
            if m.decision is not fin[1]:
                raise ProtocolViolation(f"{m.tid}: decision {m.decision} after {fin[1]} was applied")
            sim.send(self.node_id, src, Phase2Ack(m.tid, m.ballot), extra={"decision": m.decision.value})
            return
        st = self._state(m.tid, sim.now)
        st.last_contact = sim.now
        if st.promised is not None and m.ballot < st.promised:
            # NACK: tell the proposer which ballot preempted it
            sim.send(self.node_id, src, Phase2Ack(m.tid, st.promised))
            return
        st.promised = m.ballot
        st.accepted_ballot = m.ballot
        st.accepted_decision = m.decision
        st.context = m.config
        if st.applied is None:
            self._apply(sim, st, m.ballot, m.decision, m.config)
            cost = self.cfg.apply_cost_us(m.config.write_count(self.shard) if m.decision is Decision.COMMIT else 0)
            if cost > 0:
                sim.set_timer(self.node_id, cost, "phase2_ack", (m.tid, m.ballot, src, m.decision))
                return
        elif st.applied is not m.decision:
            raise ProtocolViolation(f"{m.tid}: decision {m.decision} after {st.applied} was applied")
        sim.send(self.node_id, src, Phase2Ack(m.tid, m.ballot), extra={"decision": m.decision.value})

    def _apply(self, sim, st: AcceptorState, ballot: Ballot, decision: Decision, ctx: TxnContext) -> None:
        writes = [(w.key, w.value) for w in ctx.writes_for(self.shard)]
        held = self.store.locks.held_keys(st.tid)
        self.store.apply_decision(st.tid, decision, writes)
        st.applied = decision
        st.applied_ballot = ballot
        st.repair_pending = False
        sim.record(
            "apply",
            node=self.node_id,
            tid=st.tid,
            shard=self.shard,
            decision=decision.value,
            ballot=[ballot.round, ballot.proposer],
            writes=[[k, v.hex()] for k, v in writes] if decision is Decision.COMMIT else [],
            msg="decision_applied",
        )
        for key in sorted(held):
            sim.record("unlock", node=self.node_id, tid=st.tid, key=key)
        sim.set_timer(self.node_id, self.cfg.gc_after_us, "gc", st.tid)

    def _on_gc(self, tid: str) -> None:
        st = self.states.get(tid)
        if st is None or st.applied is None:
            return
        self.finished[tid] = (st.applied_ballot, st.applied)
        del self.states[tid]
        self.highest_round.pop(tid, None)

    # -- unended-transaction detection ------------------------------------------

    def _on_scan(self, sim) -> None:
        self._scan_armed = False
        expired = self.detect_unended(sim)
        rng = sim.rng_for(self.node_id, "repair")
        rank = self.group.rank(self.node_id)
        for tid in expired:
            st = self.states[tid]
            st.repair_pending = True
            sim.record("detect_unended", node=self.node_id, tid=tid)
            delay = rank * self.cfg.repair_stagger_us + rng.randrange(self.cfg.repair_jitter_us)
            sim.set_timer(self.node_id, delay, "repair", tid)
        if any(st.applied is None and st.context is not None for st in self.states.values()):
            self._arm_scan(sim)

    def detect_unended(self, sim) -> list[str]:
        """Transactions known here, unapplied, and silent past the
        timeout. Applied transactions are never flagged."""
        now = sim.now
        out = []
        for tid, st in self.states.items():
            if st.applied is not None or st.context is None or st.repair_pending:
                continue
            if now - st.last_contact > self.cfg.detect_after_us:
                out.append(tid)
        return out

    # -- recovery proposer -------------------------------------------------------

    def _on_repair_timer(self, sim, tid: str) -> None:
        st = self.states.get(tid)
        if st is None or tid in self.finished:
            return
        if st.applied is not None:
            # the decision arrived while we waited: initiate no repair
            sim.record("recovery_skip", node=self.node_id, tid=tid, reason="applied")
            return
        if st.recovery is not None:
            return
        self.run_recovery(sim, tid)

    def run_recovery(self, sim, tid: str) -> None:
        """Full ballot: phase 1 to every replica of every shard in the
        context, then phase 2 with the constrained (or default ABORT)
        decision."""
        st = self.states.get(tid)
        if st is None or st.context is None or st.applied is not None:
            return
        rnd = self.highest_round.get(tid, 0) + 1
        self.highest_round[tid] = rnd
        ballot = Ballot(rnd, self.node_id)
        shards = st.context.shard_ids
        targets = tuple(self.shard_map.all_replicas(shards))
        groups = tuple(f"s{s}" for s in shards)
        st.recovery = RecoveryRound(ballot=ballot, targets=targets, groups=groups)
        st.repair_pending = True
        sim.record("recovery_start", node=self.node_id, tid=tid, ballot=[ballot.round, ballot.proposer])
        for node in targets:
            sim.send(self.node_id, node, Phase1(tid, ballot), root=True)
        sim.set_timer(self.node_id, self.cfg.recovery_round_timeout_us, "recovery_check", (tid, rnd))

    def handle_phase1_reply(self, sim, src: str, m: Phase1Reply) -> None:
        st = self.states.get(m.tid)
        r = st.recovery if st is not None else None
        if r is None or r.phase != 1:
            return
        self._note_round(m.tid, m.promised)
        if m.promised > r.ballot:
            self._preempted(sim, st, m.promised)
            return
        if m.promised != r.ballot:
            return
        group = self.shard_map.group_of(src)
        if group not in r.groups:
            return
        r.promises.setdefault(group, set()).add(src)
        if m.accepted_ballot is not None and (r.best_ballot is None or m.accepted_ballot > r.best_ballot):
            r.best_ballot = m.accepted_ballot
            r.best_decision = m.accepted_decision
        for g in r.groups:
            if len(r.promises.get(g, ())) < self.shard_map.groups[g].quorum_size:
                return
        # quorum of every shard group: propose the highest accepted
        # decision, or ABORT when nothing was accepted anywhere
        decision = r.best_decision if r.best_decision is not None else Decision.ABORT
        r.decision = decision
        r.phase = 2
        sim.record(
            "recovery_propose",
            node=self.node_id,
            tid=m.tid,
            ballot=[r.ballot.round, r.ballot.proposer],
            decision=decision.value,
        )
        ctx = st.context.at(sim.now)
        for node in r.targets:
            sim.send(self.node_id, node, Phase2(m.tid, r.ballot, decision, ctx))

    def handle_phase2_ack(self, sim, src: str, m: Phase2Ack) -> None:
        st = self.states.get(m.tid)
        r = st.recovery if st is not None else None
        if r is None or r.phase != 2:
            return
        if m.ballot > r.ballot:
            self._note_round(m.tid, m.ballot)
            self._preempted(sim, st, m.ballot)
            return
        if m.ballot != r.ballot:
            return
        group = self.shard_map.group_of(src)
        if group not in r.groups:
            return
        r.acks.setdefault(group, set()).add(src)
        for g in r.groups:
            if len(r.acks.get(g, ())) < self.shard_map.groups[g].quorum_size:
                return
        sim.record(
            "recovery_decided",
            node=self.node_id,
            tid=m.tid,
            ballot=[r.ballot.round, r.ballot.proposer],
            decision=r.decision.value,
        )
        # the proposer is an acceptor too; if its self-addressed phase2
        # was lost it still learned the outcome from the quorum acks
        if st.applied is None:
            if st.promised is None or r.ballot > st.promised:
                st.promised = r.ballot
            if st.accepted_ballot is None or r.ballot > st.accepted_ballot:
                st.accepted_ballot = r.ballot
                st.accepted_decision = r.decision
            self._apply(sim, st, r.ballot, r.decision, st.context)
        st.recovery = None

    def _preempted(self, sim, st: AcceptorState, by: Ballot) -> None:
        sim.record(
            "recovery_preempted",
            node=self.node_id,
            tid=st.tid,
            ballot=[st.recovery.ballot.round, st.recovery.ballot.proposer],
            by=[by.round, by.proposer],
        )
        st.recovery = None
        self._schedule_retry(sim, st.tid)

    def _schedule_retry(self, sim, tid: str) -> None:
        rng = sim.rng_for(self.node_id, "repair")
        delay = int(self.cfg.repair_stagger_us * (0.5 + rng.random()))
        sim.set_timer(self.node_id, delay, "repair", tid)

    def _on_recovery_check(self, sim, data) -> None:
        tid, rnd = data
        st = self.states.get(tid)
        if st is None or st.applied is not None or st.recovery is None:
            return
        if st.recovery.ballot.round != rnd:
            return
        # the round stalled (lost messages or unreachable quorum); retry
        sim.record("recovery_stalled", node=self.node_id, tid=tid, round=rnd)
        st.recovery = None
        self._schedule_retry(sim, tid)
