"""Deterministic YCSB-style workload generation.

A workload is a per-client stream of transaction shapes (key lists plus
op kinds) derived purely from (spec, seed, client index), so re-running
a configuration reproduces the exact same stream.
"""
from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from typing import Iterator, Optional

from ..core import Op, read_op, write_op
from ..store import SERIALIZABLE, load_keys


@dataclass(frozen=True)
class TxnSpec:
    """One transaction shape as issued by the generator."""

    ops: tuple[Op, ...]


@dataclass
class WorkloadSpec:
    txn_count: Optional[int] = None
    duration_s: Optional[float] = None
    ops_per_txn: int = 4
    read_fraction: float = 0.5
    key_space: int = 10_000
    key_distribution: str = "uniform"
    clients: int = 1
    isolation: str = SERIALIZABLE
    value_size: int = 10
    think_time_us: int = 0

    def __post_init__(self) -> None:
        if self.ops_per_txn < 1:
            raise ValueError("ops_per_txn must be >= 1")
        if not 0.0 <= self.read_fraction <= 1.0:
            raise ValueError("read_fraction must be in [0, 1]")
        if self.key_distribution != "uniform":
            raise ValueError(f"unsupported key distribution {self.key_distribution!r}")
        if self.txn_count is None and self.duration_s is None:
            raise ValueError("one of txn_count or duration_s is required")


def _client_rng(seed: int, client_idx: int) -> random.Random:
    digest = hashlib.sha256(f"workload:{seed}:{client_idx}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def _value(seed: int, client_idx: int, txn_idx: int, op_idx: int, size: int) -> bytes:
    material = hashlib.sha256(f"v:{seed}:{client_idx}:{txn_idx}:{op_idx}".encode()).digest()
    while len(material) < size:
        material += hashlib.sha256(material).digest()
    return material[:size]


def generate(spec: WorkloadSpec, seed: int, client_idx: int = 0) -> Iterator[TxnSpec]:
    """Yield this client's transaction stream. Finite when txn_count is
    set (split evenly across clients, remainder to the low indexes),
    infinite otherwise — the simulation horizon cuts it off.

    Keys within one transaction are distinct whenever the key space
    allows it; the store surfaces committed state only, so reading a key
    the same transaction just wrote would return the stale committed
    value and is not a history any application-facing run should emit.
    """
    rng = _client_rng(seed, client_idx)
    keys = load_keys(spec.key_space)
    if spec.txn_count is not None:
        per = spec.txn_count // spec.clients
        count = per + (1 if client_idx < spec.txn_count % spec.clients else 0)
    else:
        count = None
    txn_idx = 0
    while count is None or txn_idx < count:
        if spec.ops_per_txn <= spec.key_space:
            picks = rng.sample(range(spec.key_space), spec.ops_per_txn)
        else:
            picks = [rng.randrange(spec.key_space) for _ in range(spec.ops_per_txn)]
        ops = []
        for op_idx, key_i in enumerate(picks):
            key = keys[key_i]
            if rng.random() < spec.read_fraction:
                ops.append(read_op(key))
            else:
                ops.append(write_op(key, _value(seed, client_idx, txn_idx, op_idx, spec.value_size)))
        yield TxnSpec(ops=tuple(ops))
        txn_idx += 1
