"""Participant replica unit tests: execution, voting, acceptor rules,
unended-transaction detection, and the recovery proposer."""
import pytest

from hacommit.config import ProtocolConfig
from hacommit.core import (
    Ballot,
    Decision,
    ExecOp,
    LastOp,
    LastOpReply,
    OpReply,
    Phase1,
    Phase1Reply,
    Phase2,
    Phase2Ack,
    TxnContext,
    Vote,
    VoteReplicate,
    WriteCmd,
    read_op,
    write_op,
)
from hacommit.participant import ParticipantReplica, ProtocolViolation
from hacommit.simnet import FaultEvent, SimConfig, Simulator
from hacommit.store import KVStore
from hacommit.topology import ShardMap, replica_node


class Recorder:
    """Stand-in client: collects everything sent to it."""

    def __init__(self, node_id="c0"):
        self.node_id = node_id
        self.inbox = []

    def on_message(self, sim, src, msg):
        self.inbox.append((src, msg))

    def on_timer(self, sim, kind, data):
        pass

    def of_kind(self, cls):
        return [m for _, m in self.inbox if isinstance(m, cls)]


def build(replicas=3, timeout_us=10_000, shards=1):
    cfg = ProtocolConfig(timeout_us=timeout_us)
    sim = Simulator(SimConfig(seed=1))
    shard_map = ShardMap(shards=shards, replicas=replicas)
    sim.record("meta", protocol="hacommit", seed=1, shards=shards, replicas=replicas,
               key_space=8, value_size=4, isolation=cfg.isolation)
    for s in range(shards):
        for i in range(replicas):
            store = KVStore()
            store.load(8, 4, seed=1)
            nid = replica_node(s, i)
            sim.nodes[nid] = ParticipantReplica(nid, s, shard_map, store, cfg)
    client = Recorder()
    sim.nodes["c0"] = client

    def on_crash(node_id):
        shard_map.handle_crash(node_id, sim.crashed)

    sim.crash_hooks.append(on_crash)
    return sim, shard_map, client


def ctx_for(tid, key, value=None):
    ctx = TxnContext(tid).with_shard(0)
    if value is not None:
        ctx = ctx.with_write(WriteCmd(0, key, value))
    return ctx


def test_exec_op_executes_at_leader_and_replies():
    sim, sm, client = build()
    ctx = ctx_for("t1", "user0")
    sim.send("c0", "s0r0", ExecOp("t1", 1, read_op("user0"), ctx), root=True)
    sim.run_until(1_000)
    replies = client.of_kind(OpReply)
    assert len(replies) == 1 and replies[0].status == "ok"
    assert replies[0].value is not None
    # a non-leader ignores ops (stale routing)
    sim.send("c0", "s0r1", ExecOp("t1", 2, read_op("user0"), ctx), root=True)
    sim.run_until(2_000)
    assert len(client.of_kind(OpReply)) == 1


def test_write_conflict_reports_conflict_status():
    sim, sm, client = build()
    sim.send("c0", "s0r0", ExecOp("a", 1, write_op("user0", b"va"), ctx_for("a", "user0")), root=True)
    sim.send("c0", "s0r0", ExecOp("b", 1, write_op("user0", b"vb"), ctx_for("b", "user0")), root=True)
    sim.run_until(1_000)
    statuses = sorted(r.status for r in client.of_kind(OpReply))
    assert statuses == ["conflict", "ok"]


def test_vote_needs_replica_quorum_before_reply():
    sim, sm, client = build()
    ctx = ctx_for("t1", "user1", b"new!")
    sim.send("c0", "s0r0", LastOp("t1", 1, write_op("user1", b"new!"), ctx), root=True)
    sim.run_until(149)
    # vote recorded locally, replicated, but no quorum ack yet: no reply
    votes = [r for r in sim.trace.records if r["kind"] == "vote"]
    assert [(v["node"], v["vote"]) for v in votes] == [("s0r0", "yes")]
    assert client.of_kind(LastOpReply) == []
    sim.run_until(1_000)
    replies = client.of_kind(LastOpReply)
    assert len(replies) == 1 and replies[0].vote is Vote.YES
    # each follower holds the vote and context now
    for nid in ("s0r1", "s0r2"):
        st = sim.nodes[nid].states["t1"]
        assert st.vote is Vote.YES and st.context.relevant_writes


def test_vote_survives_one_crashed_follower_but_not_two():
    sim, sm, client = build()
    sim.inject(FaultEvent(at=0, action="crash", target="s0r2"))
    sim.send("c0", "s0r0", LastOp("t1", 1, write_op("user1", b"x"), ctx_for("t1", "user1", b"x")), root=True)
    sim.run_until(1_000)
    assert len(client.of_kind(LastOpReply)) == 1  # quorum 2 = leader + r1

    sim2, sm2, client2 = build()
    sim2.inject(FaultEvent(at=0, action="crash", target="s0r1"))
    sim2.inject(FaultEvent(at=0, action="crash", target="s0r2"))
    sim2.send("c0", "s0r0", LastOp("t1", 1, write_op("user1", b"x"), ctx_for("t1", "user1", b"x")), root=True)
    sim2.run_until(5_000)
    assert client2.of_kind(LastOpReply) == []  # replication quorum lost


def test_duplicate_last_op_does_not_revote():
    sim, sm, client = build()
    msg = LastOp("t1", 1, write_op("user1", b"x"), ctx_for("t1", "user1", b"x"))
    sim.send("c0", "s0r0", msg, root=True)
    sim.run_until(1_000)
    sim.send("c0", "s0r0", msg, root=True)
    sim.run_until(2_000)
    votes = [r for r in sim.trace.records if r["kind"] == "vote" and r["node"] == "s0r0"]
    assert len(votes) == 1
    assert len(client.of_kind(LastOpReply)) == 2  # resend of the same vote


def test_conflicting_vote_replication_is_a_protocol_violation():
    sim, sm, client = build()
    ctx = ctx_for("t1", "user1", b"x")
    sim.send("c0", "s0r1", VoteReplicate("t1", Vote.YES, ctx), root=True)
    sim.run_until(100)
    sim.send("c0", "s0r1", VoteReplicate("t1", Vote.NO, ctx), root=True)
    with pytest.raises(ProtocolViolation):
        sim.run_until(200)


def test_phase2_applies_and_acks_with_decision_tag():
    sim, sm, client = build()
    ctx = ctx_for("t1", "user1", b"newv")
    b0 = Ballot(0, "c0")
    for nid in ("s0r0", "s0r1", "s0r2"):
        sim.send("c0", nid, Phase2("t1", b0, Decision.COMMIT, ctx), root=True)
    sim.run_until(1_000)
    acks = client.of_kind(Phase2Ack)
    assert len(acks) == 3 and all(a.ballot == b0 for a in acks)
    sends = [r for r in sim.trace.records if r["kind"] == "send" and r["msg"] == "phase2_ack"]
    assert all(s.get("decision") == "commit" for s in sends)
    for nid in ("s0r0", "s0r1", "s0r2"):
        assert sim.nodes[nid].store.read("x", "user1", "read-committed") == b"newv"
    applies = [r for r in sim.trace.records if r["kind"] == "apply"]
    assert len(applies) == 3 and all(r["decision"] == "commit" for r in applies)


def test_conflicting_decision_is_a_protocol_violation():
    sim, sm, client = build()
    ctx = ctx_for("t1", "user1", b"v")
    sim.send("c0", "s0r0", Phase2("t1", Ballot(0, "c0"), Decision.COMMIT, ctx), root=True)
    sim.run_until(100)
    sim.send("c0", "s0r0", Phase2("t1", Ballot(1, "rx"), Decision.ABORT, ctx), root=True)
    with pytest.raises(ProtocolViolation):
        sim.run_until(200)


def test_phase1_promise_and_nack_rules():
    sim, sm, client = build()
    sim.send("c0", "s0r0", Phase1("t1", Ballot(2, "rx")), root=True)
    sim.run_until(200)
    (src, r1), = [(s, m) for s, m in client.inbox if isinstance(m, Phase1Reply)]
    assert r1.promised == Ballot(2, "rx") and r1.accepted_ballot is None
    # lower ballot now gets the higher promise back (a NACK)
    sim.send("c0", "s0r0", Phase1("t1", Ballot(1, "ry")), root=True)
    sim.run_until(400)
    r2 = client.of_kind(Phase1Reply)[-1]
    assert r2.promised == Ballot(2, "rx")
    # phase2 below the promise is NACKed with the promised ballot
    sim.send("c0", "s0r0", Phase2("t1", Ballot(0, "c0"), Decision.COMMIT, ctx_for("t1", "user1", b"v")), root=True)
    sim.run_until(600)
    nack = client.of_kind(Phase2Ack)[-1]
    assert nack.ballot == Ballot(2, "rx")
    assert sim.nodes["s0r0"].states["t1"].applied is None


def test_phase1_reports_applied_decision_as_accepted():
    sim, sm, client = build()
    ctx = ctx_for("t1", "user1", b"v")
    sim.send("c0", "s0r0", Phase2("t1", Ballot(0, "c0"), Decision.COMMIT, ctx), root=True)
    sim.run_until(100)
    sim.send("c0", "s0r0", Phase1("t1", Ballot(3, "rx")), root=True)
    sim.run_until(300)
    reply = client.of_kind(Phase1Reply)[-1]
    assert reply.accepted_ballot == Ballot(0, "c0")
    assert reply.accepted_decision is Decision.COMMIT


def _seed_votes(sim, tid, key, value):
    """Run the normal vote round for tid and stop before any decision."""
    ctx = ctx_for(tid, key, value)
    sim.send("c0", "s0r0", LastOp(tid, 1, write_op(key, value), ctx), root=True)
    sim.run_until(sim.now + 1_000)


def test_recovery_aborts_voted_but_undecided_txn():
    sim, sm, client = build(timeout_us=10_000)
    _seed_votes(sim, "t1", "user1", b"dangling")
    sim.run_until()  # quiescence: detection, repair, gc all fire
    applies = [r for r in sim.trace.records if r["kind"] == "apply"]
    assert len(applies) == 3 and all(r["decision"] == "abort" for r in applies)
    assert all(r["ballot"][0] >= 1 for r in applies)  # recovery ballot, not the client's
    starts = [r for r in sim.trace.records if r["kind"] == "recovery_start"]
    assert len(starts) == 1  # rank stagger keeps it to a single proposer
    # detection happened after the silence window, not before
    detect = [r for r in sim.trace.records if r["kind"] == "detect_unended"]
    assert min(d["t"] for d in detect) > 10_000
    # gc moved the outcome to the immortal map
    assert sim.nodes["s0r0"].states == {} and sim.nodes["s0r0"].finished["t1"][1] is Decision.ABORT
    # locks were released by the abort
    assert sim.nodes["s0r0"].store.locks.state("user1") == ("free", set())


def test_recovery_preserves_partially_accepted_commit():
    sim, sm, client = build(timeout_us=10_000)
    _seed_votes(sim, "t1", "user1", b"winner!")
    # the client's decision reached one replica before the client died
    sim.send("c0", "s0r1", Phase2("t1", Ballot(0, "c0"), Decision.COMMIT, ctx_for("t1", "user1", b"winner!")), root=True)
    sim.run_until()
    for nid in ("s0r0", "s0r1", "s0r2"):
        node = sim.nodes[nid]
        decided = node.finished.get("t1") or (None, node.states.get("t1") and node.states["t1"].applied)
        assert decided[1] is Decision.COMMIT
        assert node.store.read("x", "user1", "read-committed") == b"winner!"
    # the replica that already applied never initiates repair for it
    assert not [
        r for r in sim.trace.records
        if r["kind"] == "recovery_start" and r["node"] == "s0r1"
    ]


def test_applied_observer_skips_repair():
    sim, sm, client = build(timeout_us=10_000)
    ctx = ctx_for("t1", "user1", b"v")
    for nid in ("s0r0", "s0r1", "s0r2"):
        sim.send("c0", nid, Phase2("t1", Ballot(0, "c0"), Decision.COMMIT, ctx), root=True)
    sim.run_until()
    assert [r for r in sim.trace.records if r["kind"] in ("detect_unended", "recovery_start")] == []


def test_restarted_replica_is_passive_learner():
    sim, sm, client = build()
    sim.inject(FaultEvent(at=10, action="crash", target="s0r1"))
    sim.inject(FaultEvent(at=20, action="restart", target="s0r1"))
    sim.run_until(30)
    assert sim.nodes["s0r1"].learner_only
    sim.send("c0", "s0r1", Phase1("t9", Ballot(1, "rx")), root=True)
    sim.send("c0", "s0r1", VoteReplicate("t9", Vote.YES, ctx_for("t9", "user1", b"v")), root=True)
    sim.run_until(1_000)
    assert client.inbox == []  # no promise, no ack: it observes only


def test_gc_then_stale_phase2_gets_nack():
    sim, sm, client = build(timeout_us=1_000)  # gc after 10ms
    ctx = ctx_for("t1", "user1", b"v")
    recovery_ballot = Ballot(2, "s0r2")
    sim.send("c0", "s0r0", Phase2("t1", recovery_ballot, Decision.ABORT, ctx), root=True)
    sim.run_until()  # gc fires at quiescence
    assert "t1" in sim.nodes["s0r0"].finished
    sim.send("c0", "s0r0", Phase2("t1", Ballot(0, "c0"), Decision.COMMIT, ctx), root=True)
    sim.run_until(sim.now + 1_000)
    nack = client.of_kind(Phase2Ack)[-1]
    assert nack.ballot == recovery_ballot  # stale ballot learns what finished
    # a matching re-delivery at or above the finished ballot is acked
    sim.send("c0", "s0r0", Phase2("t1", recovery_ballot, Decision.ABORT, ctx), root=True)
    sim.run_until(sim.now + 1_000)
    assert client.of_kind(Phase2Ack)[-1].ballot == recovery_ballot
