"""Single-version in-memory key-value store with strict two-phase locking.

Each record keeps one committed version plus at most one pending
(staged) write. There is no multi-version concurrency: readers see the
committed value only, including the writer itself before its decision
applies. Lock conflicts fail immediately (no-wait policy); every lock a
transaction holds is released only when its decision is applied.

Two isolation modes:
  serializable    reads take read locks, writes take write locks
  read-committed  reads take no locks at all, writes still lock
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

from .core import Decision

SERIALIZABLE = "serializable"
READ_COMMITTED = "read-committed"
ISOLATION_MODES = (SERIALIZABLE, READ_COMMITTED)

READ = "read"
WRITE = "write"

INIT_TXN = "00000000000000000000000000000000"


class LockNotHeld(Exception):
    """A write was staged without the required write lock. This is a
    protocol bug, not a runtime condition, so it fails fast."""


class ConflictingDecision(Exception):
    """Two different decisions were applied for the same transaction.
    Reaching this point means agreement was violated upstream."""


class LockTable:
    """Per-key lock state: free, read-held by a set, or write-held by one."""

    def __init__(self) -> None:
        self._readers: dict[str, set[str]] = {}
        self._writer: dict[str, str] = {}
        self._held: dict[str, set[str]] = {}  # tid -> keys it holds locks on

    def acquire(self, tid: str, key: str, mode: str) -> bool:
        """Try to take a lock; returns False on conflict (no waiting).

        Re-acquisition by the holder is granted, and a sole reader may
        upgrade its read lock to a write lock.
        """
        writer = self._writer.get(key)
        readers = self._readers.get(key)
        if mode == READ:
            if writer is not None and writer != tid:
                return False
            if writer != tid:
                self._readers.setdefault(key, set()).add(tid)
        elif mode == WRITE:
            if writer is not None:
                if writer != tid:
                    return False
            else:
                if readers and readers - {tid}:
                    return False
                if readers:
                    readers.discard(tid)
                    if not readers:
                        del self._readers[key]
                self._writer[key] = tid
        else:
            raise ValueError(f"unknown lock mode {mode!r}")
        self._held.setdefault(tid, set()).add(key)
        return True

    def release_all(self, tid: str) -> list[str]:
        """Drop every lock held by tid; returns the released keys."""
        released = []
        for key in sorted(self._held.pop(tid, ())):
            if self._writer.get(key) == tid:
                del self._writer[key]
                released.append(key)
            readers = self._readers.get(key)
            if readers and tid in readers:
                readers.discard(tid)
                if not readers:
                    del self._readers[key]
                released.append(key)
        return released

    def holds(self, tid: str, key: str, mode: str) -> bool:
        if mode == WRITE:
            return self._writer.get(key) == tid
        return self._writer.get(key) == tid or tid in self._readers.get(key, ())

    def state(self, key: str):
        """(kind, holders) view for tests and auditing."""
        if key in self._writer:
            return ("write-held", {self._writer[key]})
        if key in self._readers:
            return ("read-held", set(self._readers[key]))
        return ("free", set())

    def held_keys(self, tid: str) -> set[str]:
        return set(self._held.get(tid, ()))

    def all_held(self) -> dict[str, set[str]]:
        """tid -> held keys, for end-of-run blocking detection."""
        return {tid: set(keys) for tid, keys in self._held.items() if keys}


@dataclass
class Record:
    key: str
    committed_value: Optional[bytes]
    committed_by: str = INIT_TXN
    pending: Optional[tuple[str, bytes]] = None  # (tid, staged value)


def load_keys(count: int) -> list[str]:
    """Initial key population: zero-padded decimal suffixes."""
    width = len(str(count - 1)) if count > 1 else 1
    return [f"user{i:0{width}d}" for i in range(count)]


def initial_value(seed: int, key: str, value_size: int) -> bytes:
    """Deterministic initial value for one key; auditors regenerate the
    preloaded state from (seed, key_space, value_size) alone."""
    digest = hashlib.sha256(f"{seed}:{key}".encode()).digest()
    while len(digest) < value_size:
        digest += hashlib.sha256(digest).digest()
    return digest[:value_size]


class KVStore:
    """One replica's store. Pure data structure: no clock, no messages."""

    def __init__(self, vote_check: Optional[Callable[[str, "KVStore"], bool]] = None) -> None:
        self.records: dict[str, Record] = {}
        self.locks = LockTable()
        self.decisions: dict[str, Decision] = {}
        self._staged: dict[str, set[str]] = {}  # tid -> keys with pending writes
        # Hook consulted at vote time; the default checks lock state only
        # (which held locks already guarantee), so it is a constant pass.
        self.vote_check = vote_check

    def load(self, count: int, value_size: int, seed: int) -> None:
        for key in load_keys(count):
            self.records[key] = Record(key, initial_value(seed, key, value_size))

    def acquire(self, tid: str, key: str, mode: str) -> bool:
        return self.locks.acquire(tid, key, mode)

    def stage_write(self, tid: str, key: str, value: bytes) -> None:
        if not self.locks.holds(tid, key, WRITE):
            raise LockNotHeld(f"{tid} staging {key!r} without a write lock")
        rec = self.records.get(key)
        if rec is None:
            rec = Record(key, None)
            self.records[key] = rec
        rec.pending = (tid, value)
        self._staged.setdefault(tid, set()).add(key)

    def read(self, tid: str, key: str, isolation: str = SERIALIZABLE) -> Optional[bytes]:
        """Committed value of key, or None when absent. In serializable
        mode the caller must already hold a read (or write) lock."""
        if isolation == SERIALIZABLE and not (
            self.locks.holds(tid, key, READ) or self.locks.holds(tid, key, WRITE)
        ):
            raise LockNotHeld(f"{tid} reading {key!r} without a lock in serializable mode")
        rec = self.records.get(key)
        return rec.committed_value if rec is not None else None

    def check_vote(self, tid: str) -> bool:
        if self.vote_check is None:
            return True
        return self.vote_check(tid, self)

    def apply_decision(self, tid: str, decision: Decision, writes: Iterable[tuple[str, bytes]]) -> bool:
        """Finalize a transaction at this replica. Idempotent; applying a
        different decision for the same tid raises. The write list comes
        from the transaction context, so the recovery path can commit
        writes this replica never staged. Returns False on a duplicate.
        """
        prior = self.decisions.get(tid)
        if prior is not None:
            if prior is not decision:
                raise ConflictingDecision(f"{tid}: {prior.value} already applied, got {decision.value}")
            return False
        if decision is Decision.COMMIT:
            for key, value in writes:
                rec = self.records.get(key)
                if rec is None:
                    rec = Record(key, None)
                    self.records[key] = rec
                rec.committed_value = value
                rec.committed_by = tid
                if rec.pending is not None and rec.pending[0] == tid:
                    rec.pending = None
        for key in self._staged.pop(tid, ()):
            rec = self.records[key]
            if rec.pending is not None and rec.pending[0] == tid:
                rec.pending = None
        self.locks.release_all(tid)
        self.decisions[tid] = decision
        return True

    def snapshot(self) -> dict[str, Optional[bytes]]:
        return {k: r.committed_value for k, r in self.records.items()}

    def state_hash(self) -> str:
        h = hashlib.sha256()
        for key in sorted(self.records):
            value = self.records[key].committed_value
            h.update(key.encode())
            h.update(b"\x00" if value is None else b"\x01" + value)
            h.update(b"\n")
        return h.hexdigest()
