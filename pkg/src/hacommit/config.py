"""Tunable protocol parameters shared by clients, replicas, and baselines.

All durations are integer simulated microseconds. The cost models are
configuration, not constants: the forced-log model prices the baseline
protocols' durability writes, the replication model prices shipping a
record to a replica group, and the apply model prices installing a
decision's writes (zero by default, so a fault-free commit spans
exactly two message delays).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from .store import SERIALIZABLE

ANY_QUORUM = "any-quorum"
ALL_QUORUMS = "all-quorums"

INCONSISTENT = "inconsistent"
CONSISTENT = "consistent"

PHASE2_DIRECT = "direct"
PHASE2_LEADER_RELAY = "leader-relay"  # reserved; not implemented


@dataclass
class ProtocolConfig:
    # unended-transaction detection and repair
    timeout_us: int = 15_000_000
    repair_delay_multiplier: int = 1
    gc_timeout_multiplier: int = 10

    # client behaviour
    reply_timeout_us: int = 500_000
    retransmit_interval_us: int = 400  # 2 x one-way delay x 4 at the 50us default
    max_retransmits: int = 10
    ack_policy: str = ANY_QUORUM
    backoff_lo_rtt: float = 0.5  # conflict retry back-off, in round trips
    backoff_hi_rtt: float = 2.0
    one_way_us: int = 50  # hint used for retry pacing

    # execution and decision dissemination
    replication_mode: str = INCONSISTENT
    phase2_fanout: str = PHASE2_DIRECT
    isolation: str = SERIALIZABLE

    # cost models
    apply_base_us: int = 0
    apply_per_write_us: int = 0
    log_base_us: int = 200
    log_per_entry_us: int = 10
    rep_per_entry_us: int = 10

    # hook consulted by participants at vote time (None = lock-state only)
    vote_check: Optional[Callable] = None

    def __post_init__(self) -> None:
        if self.phase2_fanout != PHASE2_DIRECT:
            raise NotImplementedError(f"phase2_fanout={self.phase2_fanout!r} is a config stub; only 'direct' is implemented")

    # -- derived periods -----------------------------------------------------

    @property
    def detect_after_us(self) -> int:
        return self.timeout_us * self.repair_delay_multiplier

    @property
    def scan_period_us(self) -> int:
        return max(self.timeout_us // 3, 1)

    @property
    def repair_stagger_us(self) -> int:
        """Base separation between same-group proposers' repair timers."""
        return max(self.timeout_us // 10, 1)

    @property
    def repair_jitter_us(self) -> int:
        """Random slack added to a repair timer; strictly below the
        stagger step so same-group proposers keep their rank order."""
        return max(self.timeout_us // 20, 1)

    @property
    def recovery_round_timeout_us(self) -> int:
        return max(self.timeout_us // 2, 1)

    @property
    def gc_after_us(self) -> int:
        return self.timeout_us * self.gc_timeout_multiplier

    @property
    def rtt_us(self) -> int:
        return 2 * self.one_way_us

    # -- cost models -----------------------------------------------------------

    def apply_cost_us(self, writes: int) -> int:
        return self.apply_base_us + self.apply_per_write_us * writes

    def log_cost_us(self, entries: int) -> int:
        """Forced-log delay for a record of `entries` entries."""
        return self.log_base_us + self.log_per_entry_us * entries

    def rep_cost_us(self, entries: int) -> int:
        """Processing delay for replicating a record of `entries` entries."""
        return self.rep_per_entry_us * entries

    def with_one_way(self, one_way_us: int) -> "ProtocolConfig":
        return replace(
            self,
            one_way_us=one_way_us,
            retransmit_interval_us=8 * max(one_way_us, 1),
        )
