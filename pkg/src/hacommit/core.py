"""Core domain types shared by every protocol role.

Transaction ids, ballots, shard ids, transaction contexts, votes,
decisions, and the closed set of wire messages together with a
line-oriented self-describing codec (used for message files and round
trip tests; the simulator's trace records use compact summaries of the
same messages).

All types in this module are immutable values. Mutation happens only
inside the role state machines that own copies of them.
"""
from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, fields as dataclass_fields
from enum import Enum
from typing import ClassVar, Optional, Union


class Vote(Enum):
    YES = "yes"
    NO = "no"


class Decision(Enum):
    COMMIT = "commit"
    ABORT = "abort"


# ---------------------------------------------------------------------------
# ballots


@dataclass(frozen=True, slots=True)
class Ballot:
    """Totally ordered proposal number for one transaction's decision.

    Ordering is lexicographic on (round, proposer). Round 0 is reserved
    for the transaction's own client, so the client's ballot is the
    unique minimum: every recovery proposer picks a round >= 1.
    """

    round: int
    proposer: str

    def sort_key(self) -> tuple[int, str]:
        return (self.round, self.proposer)

    def __lt__(self, other: "Ballot") -> bool:
        return self.sort_key() < other.sort_key()

    def __le__(self, other: "Ballot") -> bool:
        return self.sort_key() <= other.sort_key()

    def __gt__(self, other: "Ballot") -> bool:
        return self.sort_key() > other.sort_key()

    def __ge__(self, other: "Ballot") -> bool:
        return self.sort_key() >= other.sort_key()


CLIENT_ROUND = 0


def client_ballot(client_id: str) -> Ballot:
    """The round-zero ballot a client uses for its own decision."""
    return Ballot(CLIENT_ROUND, client_id)


def ballot_compare(a: Ballot, b: Ballot) -> int:
    """Three-way comparison: -1, 0, or 1."""
    if a.sort_key() < b.sort_key():
        return -1
    if a.sort_key() > b.sort_key():
        return 1
    return 0


# ---------------------------------------------------------------------------
# transaction ids

TXN_ID_BITS = 128


def fresh_txn_id(client_id: str, rng: random.Random) -> str:
    """Mint a 128-bit transaction id, deterministic given the RNG state.

    The raw draw is salted with the minting client's id so two clients
    sharing an RNG seed position still produce distinct ids.
    """
    raw = rng.getrandbits(TXN_ID_BITS).to_bytes(TXN_ID_BITS // 8, "big")
    return hashlib.sha256(client_id.encode() + raw).hexdigest()[:32]


# ---------------------------------------------------------------------------
# transaction context


@dataclass(frozen=True, slots=True)
class WriteCmd:
    """One write of a transaction: full new value for a key on a shard."""

    shard: int
    key: str
    value: bytes


@dataclass(frozen=True, slots=True)
class TxnContext:
    """Everything a recovery proposer needs to finish a transaction.

    shard_ids is an ordered set (contact order, no duplicates) that only
    grows while the client executes. relevant_writes always travels with
    the context, even when per-shard execution already holds the data,
    so a replica that never executed an operation can still apply a
    COMMIT decision.
    """

    tid: str
    shard_ids: tuple[int, ...] = ()
    relevant_writes: tuple[WriteCmd, ...] = ()
    last_contact: int = 0

    def with_shard(self, shard: int) -> "TxnContext":
        if shard in self.shard_ids:
            return self
        return TxnContext(self.tid, self.shard_ids + (shard,), self.relevant_writes, self.last_contact)

    def with_write(self, cmd: WriteCmd) -> "TxnContext":
        ctx = self.with_shard(cmd.shard)
        return TxnContext(ctx.tid, ctx.shard_ids, ctx.relevant_writes + (cmd,), ctx.last_contact)

    def at(self, now: int) -> "TxnContext":
        return TxnContext(self.tid, self.shard_ids, self.relevant_writes, now)

    def writes_for(self, shard: int) -> tuple[WriteCmd, ...]:
        return tuple(w for w in self.relevant_writes if w.shard == shard)

    def write_count(self, shard: Optional[int] = None) -> int:
        if shard is None:
            return len(self.relevant_writes)
        return sum(1 for w in self.relevant_writes if w.shard == shard)


# ---------------------------------------------------------------------------
# operations


@dataclass(frozen=True, slots=True)
class Op:
    """A single read or write against one key."""

    kind: str  # "read" | "write"
    key: str
    value: Optional[bytes] = None


def read_op(key: str) -> Op:
    return Op("read", key)


def write_op(key: str, value: bytes) -> Op:
    return Op("write", key, value)


# ---------------------------------------------------------------------------
# wire messages
#
# Every message carries the transaction id. The decision message
# (Phase2) always carries the full context so any replica can apply the
# outcome without having executed the transaction.


@dataclass(frozen=True, slots=True)
class ExecOp:
    kind: ClassVar[str] = "exec_op"
    tid: str
    seq: int
    op: Optional[Op]  # None means pure context refresh, no reply expected
    config: TxnContext


@dataclass(frozen=True, slots=True)
class OpReply:
    kind: ClassVar[str] = "op_reply"
    tid: str
    seq: int
    status: str  # "ok" | "conflict"
    value: Optional[bytes] = None


@dataclass(frozen=True, slots=True)
class LastOp:
    kind: ClassVar[str] = "last_op"
    tid: str
    seq: int
    op: Optional[Op]  # None marks a vote-only request for this shard
    config: TxnContext


@dataclass(frozen=True, slots=True)
class LastOpReply:
    kind: ClassVar[str] = "last_op_reply"
    tid: str
    vote: Vote
    status: str
    value: Optional[bytes] = None


@dataclass(frozen=True, slots=True)
class VoteReplicate:
    kind: ClassVar[str] = "vote_replicate"
    tid: str
    vote: Vote
    context: TxnContext


@dataclass(frozen=True, slots=True)
class VoteReplicateAck:
    kind: ClassVar[str] = "vote_replicate_ack"
    tid: str


@dataclass(frozen=True, slots=True)
class Phase1:
    kind: ClassVar[str] = "phase1"
    tid: str
    ballot: Ballot


@dataclass(frozen=True, slots=True)
class Phase1Reply:
    kind: ClassVar[str] = "phase1_reply"
    tid: str
    promised: Ballot
    accepted_ballot: Optional[Ballot] = None
    accepted_decision: Optional[Decision] = None


@dataclass(frozen=True, slots=True)
class Phase2:
    kind: ClassVar[str] = "phase2"
    tid: str
    ballot: Ballot
    decision: Decision
    config: TxnContext


@dataclass(frozen=True, slots=True)
class Phase2Ack:
    """Acceptance ack. A ballot higher than the proposal is a NACK
    telling the proposer which ballot preempted it."""

    kind: ClassVar[str] = "phase2_ack"
    tid: str
    ballot: Ballot


@dataclass(frozen=True, slots=True)
class DecisionApplied:
    """Local marker that a node applied the decision for tid. Appears in
    traces as the decide event; it is never routed over the network."""

    kind: ClassVar[str] = "decision_applied"
    tid: str


@dataclass(frozen=True, slots=True)
class OpReplicate:
    """Consistent execution-replication mode: leader forwards one staged
    write to its group before replying to the client."""

    kind: ClassVar[str] = "op_replicate"
    tid: str
    seq: int
    shard: int
    key: str
    value: bytes


@dataclass(frozen=True, slots=True)
class OpReplicateAck:
    kind: ClassVar[str] = "op_replicate_ack"
    tid: str
    seq: int


# --- baseline protocol messages (classic prepare/decide commit) ---


@dataclass(frozen=True, slots=True)
class Prepare:
    kind: ClassVar[str] = "prepare"
    tid: str
    config: TxnContext


@dataclass(frozen=True, slots=True)
class PrepareVote:
    kind: ClassVar[str] = "prepare_vote"
    tid: str
    shard: int
    vote: Vote


@dataclass(frozen=True, slots=True)
class DecisionMsg:
    kind: ClassVar[str] = "decision_msg"
    tid: str
    decision: Decision
    config: TxnContext


@dataclass(frozen=True, slots=True)
class DecisionAck:
    kind: ClassVar[str] = "decision_ack"
    tid: str


@dataclass(frozen=True, slots=True)
class ReplicateRec:
    """Intra-group replication of a commit-protocol record (prepared
    vote or decision) in the replicated-2PC baseline."""

    kind: ClassVar[str] = "replicate_rec"
    tid: str
    group: str  # "coord" or "s<N>"
    rec_kind: str  # "prepare" | "decision"
    entries: int  # record size in log entries, drives the replication cost model
    vote: Optional[Vote] = None
    decision: Optional[Decision] = None
    config: Optional[TxnContext] = None


@dataclass(frozen=True, slots=True)
class ReplicateRecAck:
    kind: ClassVar[str] = "replicate_rec_ack"
    tid: str
    rec_kind: str


MESSAGE_TYPES = (
    ExecOp,
    OpReply,
    LastOp,
    LastOpReply,
    VoteReplicate,
    VoteReplicateAck,
    Phase1,
    Phase1Reply,
    Phase2,
    Phase2Ack,
    DecisionApplied,
    OpReplicate,
    OpReplicateAck,
    Prepare,
    PrepareVote,
    DecisionMsg,
    DecisionAck,
    ReplicateRec,
    ReplicateRecAck,
)

Message = Union[MESSAGE_TYPES]

_REGISTRY = {cls.kind: cls for cls in MESSAGE_TYPES}


# ---------------------------------------------------------------------------
# codec
#
# Field encoding is driven by field name: every message field with a
# given name has the same type across variants, which keeps the codec a
# single table instead of per-variant boilerplate.

_BALLOT_FIELDS = {"ballot", "promised", "accepted_ballot"}
_VOTE_FIELDS = {"vote"}
_DECISION_FIELDS = {"decision", "accepted_decision"}
_OP_FIELDS = {"op"}
_CTX_FIELDS = {"config", "context"}
_BYTES_FIELDS = {"value"}


def _encode_ballot(b: Ballot) -> list:
    return [b.round, b.proposer]


def _decode_ballot(v) -> Ballot:
    return Ballot(int(v[0]), str(v[1]))


def _encode_op(op: Op) -> dict:
    d = {"kind": op.kind, "key": op.key}
    if op.value is not None:
        d["value"] = op.value.hex()
    return d


def _decode_op(d: dict) -> Op:
    value = bytes.fromhex(d["value"]) if "value" in d else None
    return Op(d["kind"], d["key"], value)


def encode_context(ctx: TxnContext) -> dict:
    return {
        "tid": ctx.tid,
        "shard_ids": list(ctx.shard_ids),
        "relevant_writes": [[w.shard, w.key, w.value.hex()] for w in ctx.relevant_writes],
        "last_contact": ctx.last_contact,
    }


def decode_context(d: dict) -> TxnContext:
    writes = tuple(WriteCmd(int(s), k, bytes.fromhex(v)) for s, k, v in d["relevant_writes"])
    return TxnContext(d["tid"], tuple(int(s) for s in d["shard_ids"]), writes, int(d["last_contact"]))


def _encode_field(name: str, value):
    if value is None:
        return None
    if name in _BALLOT_FIELDS:
        return _encode_ballot(value)
    if name in _VOTE_FIELDS or name in _DECISION_FIELDS:
        return value.value
    if name in _OP_FIELDS:
        return _encode_op(value)
    if name in _CTX_FIELDS:
        return encode_context(value)
    if name in _BYTES_FIELDS:
        return value.hex()
    return value


def _decode_field(name: str, value):
    if value is None:
        return None
    if name in _BALLOT_FIELDS:
        return _decode_ballot(value)
    if name in _VOTE_FIELDS:
        return Vote(value)
    if name in _DECISION_FIELDS:
        return Decision(value)
    if name in _OP_FIELDS:
        return _decode_op(value)
    if name in _CTX_FIELDS:
        return decode_context(value)
    if name in _BYTES_FIELDS:
        return bytes.fromhex(value)
    return value


def encode_message(m: Message) -> dict:
    out = {"msg": m.kind}
    for f in dataclass_fields(m):
        encoded = _encode_field(f.name, getattr(m, f.name))
        if encoded is not None:
            out[f.name] = encoded
    return out


def decode_message(d: dict) -> Message:
    cls = _REGISTRY[d["msg"]]
    kwargs = {}
    for f in dataclass_fields(cls):
        kwargs[f.name] = _decode_field(f.name, d.get(f.name))
    return cls(**kwargs)


def encode_line(m: Message) -> str:
    """One message as a line-delimited self-describing record."""
    return json.dumps(encode_message(m), sort_keys=True, separators=(",", ":"))


def decode_line(line: str) -> Message:
    return decode_message(json.loads(line))


def summarize_message(m: Message) -> dict:
    """Compact summary of a message for trace records: identity fields
    only, no payload bodies."""
    out = {"msg": m.kind, "tid": m.tid}
    for name in ("seq", "shard", "status", "rec_kind", "group", "entries"):
        v = getattr(m, name, None)
        if v is not None:
            out[name] = v
    for name in _BALLOT_FIELDS:
        v = getattr(m, name, None)
        if v is not None:
            out[name] = _encode_ballot(v)
    for name in _VOTE_FIELDS | _DECISION_FIELDS:
        v = getattr(m, name, None)
        if v is not None:
            out[name] = v.value
    op = getattr(m, "op", None)
    if op is not None:
        out["op_kind"] = op.kind
        out["key"] = op.key
    ctx = getattr(m, "config", None) or getattr(m, "context", None)
    if ctx is not None:
        out["shards"] = list(ctx.shard_ids)
        out["writes"] = len(ctx.relevant_writes)
    return out
