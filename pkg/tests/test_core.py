"""Ballot ordering, transaction ids, contexts, message summaries."""
import itertools
import random

import pytest
from hypothesis import given, strategies as st

from hacommit.core import (
    Ballot,
    CLIENT_ROUND,
    Decision,
    TxnContext,
    Vote,
    WriteCmd,
    ballot_compare,
    client_ballot,
    fresh_txn_id,
    read_op,
    summarize_message,
    write_op,
)
from hacommit.core import ExecOp, LastOpReply, Phase2, Phase2Ack


# oracle: ballots ordered exactly like their (round, proposer) tuples
def test_ballot_order_matches_tuple_order():
    names = ["c0", "s0r0", "s0r1", "s1r2"]
    ballots = [Ballot(r, p) for r in range(4) for p in names]
    for a, b in itertools.product(ballots, ballots):
        assert (a < b) == (a.sort_key() < b.sort_key())
        assert (a >= b) == (a.sort_key() >= b.sort_key())
        assert ballot_compare(a, b) == (a.sort_key() > b.sort_key()) - (a.sort_key() < b.sort_key())


def test_client_ballot_is_unique_minimum():
    cb = client_ballot("c0")
    assert cb.round == CLIENT_ROUND
    for r in range(1, 5):
        for p in ("a", "c0", "zzz"):
            assert cb < Ballot(r, p)
    # same round, different proposer still totally ordered
    assert client_ballot("c0") < client_ballot("c1")


ballots = st.tuples(st.integers(0, 10), st.text("abc01", min_size=1, max_size=4)).map(lambda t: Ballot(*t))


@given(ballots, ballots, ballots)
def test_ballot_total_order_properties(a, b, c):
    assert (a < b) or (b < a) or (a == b)
    if a < b and b < c:
        assert a < c
    assert not (a < b and b < a)


def test_fresh_txn_ids_do_not_collide():
    rng = random.Random(0)
    ids = {fresh_txn_id("c0", rng) for _ in range(100_000)}
    assert len(ids) == 100_000
    # same rng stream, different client: still distinct ids
    r1, r2 = random.Random(7), random.Random(7)
    assert fresh_txn_id("c0", r1) != fresh_txn_id("c1", r2)


def test_fresh_txn_id_deterministic():
    assert fresh_txn_id("c0", random.Random(42)) == fresh_txn_id("c0", random.Random(42))


def test_context_grows_monotonically():
    ctx = TxnContext("t1")
    ctx = ctx.with_shard(2)
    ctx = ctx.with_shard(0)
    ctx = ctx.with_shard(2)  # duplicate ignored
    assert ctx.shard_ids == (2, 0)
    ctx = ctx.with_write(WriteCmd(1, "k", b"v"))
    assert ctx.shard_ids == (2, 0, 1)
    assert ctx.write_count() == 1
    assert ctx.write_count(1) == 1 and ctx.write_count(0) == 0
    assert ctx.writes_for(1) == (WriteCmd(1, "k", b"v"),)


def test_context_is_immutable():
    ctx = TxnContext("t1")
    ctx.with_shard(1)
    assert ctx.shard_ids == ()
    with pytest.raises(AttributeError):
        ctx.tid = "t2"


def test_summarize_message_identity_fields_only():
    ctx = TxnContext("t", (0, 1), (WriteCmd(0, "k", b"v"),))
    s = summarize_message(Phase2("t", Ballot(0, "c0"), Decision.COMMIT, ctx))
    assert s == {
        "msg": "phase2",
        "tid": "t",
        "ballot": [0, "c0"],
        "decision": "commit",
        "shards": [0, 1],
        "writes": 1,
    }
    assert "value" not in summarize_message(ExecOp("t", 1, write_op("k", b"secret"), ctx))
    assert summarize_message(LastOpReply("t", Vote.NO, "conflict"))["vote"] == "no"
    assert summarize_message(Phase2Ack("t", Ballot(3, "s0r1")))["ballot"] == [3, "s0r1"]


def test_op_constructors():
    assert read_op("k").kind == "read" and read_op("k").value is None
    w = write_op("k", b"v")
    assert (w.kind, w.key, w.value) == ("write", "k", b"v")


def test_wire_codec_round_trips_every_message_type():
    from hacommit.core import (
        DecisionAck,
        DecisionMsg,
        LastOp,
        OpReplicate,
        OpReplicateAck,
        OpReply,
        Phase1,
        Phase1Reply,
        Prepare,
        PrepareVote,
        ReplicateRec,
        VoteReplicate,
        VoteReplicateAck,
        decode_line,
        encode_line,
    )

    ctx = TxnContext("t", (0,), (WriteCmd(0, "k", b"\x00\xff"),), last_contact=12)
    samples = [
        ExecOp("t", 3, write_op("k", b"v"), ctx),
        ExecOp("t", 4, None, ctx),
        OpReply("t", 3, "ok", b"v"),
        OpReply("t", 3, "conflict"),
        LastOp("t", 5, read_op("k"), ctx),
        LastOpReply("t", Vote.YES, "ok", b"v"),
        VoteReplicate("t", Vote.NO, ctx),
        VoteReplicateAck("t"),
        Phase1("t", Ballot(2, "s0r1")),
        Phase1Reply("t", Ballot(2, "s0r1"), Ballot(0, "c0"), Decision.COMMIT),
        Phase1Reply("t", Ballot(2, "s0r1")),
        Phase2("t", Ballot(0, "c0"), Decision.ABORT, ctx),
        Phase2Ack("t", Ballot(0, "c0")),
        OpReplicate("t", 1, 0, "k", b"v"),
        OpReplicateAck("t", 1),
        Prepare("t", ctx),
        PrepareVote("t", 0, Vote.YES),
        DecisionMsg("t", Decision.COMMIT, ctx),
        DecisionAck("t"),
        ReplicateRec("t", "s0", "prepare", 2, vote=Vote.YES, config=ctx),
        ReplicateRec("t", "coord", "decision", 1, decision=Decision.COMMIT, config=ctx),
    ]
    for msg in samples:
        assert decode_line(encode_line(msg)) == msg
