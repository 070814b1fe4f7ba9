"""Deterministic discrete-event network simulator with fault injection.

Logical time is 64-bit integer microseconds. A single heap drives the
run; events are processed in (time, sequence) order, so two runs with
the same configuration produce byte-identical traces. Randomness comes
from one root seed split per (node, purpose) with a stable hash, which
keeps one node's draws independent of activity elsewhere.

Faults are crash-stop: a crashed node silently discards deliveries and
its timers never fire. A restarted node comes back empty and passive
(its state machine decides what that means; for replicas it rejoins as
a non-voting learner). Partitions block messages at send time; per-pair
FIFO delivery is NOT guaranteed once delays vary.
"""
from __future__ import annotations

import hashlib
import heapq
import json
import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from .core import Message, summarize_message

US_PER_S = 1_000_000


class LivelockError(Exception):
    """The run exceeded its event budget without finishing."""


@dataclass(frozen=True)
class DelaySpec:
    """One-way message delay: constant, or uniform over [lo, hi] us."""

    kind: str = "constant"  # "constant" | "uniform"
    lo: int = 50
    hi: int = 50

    @staticmethod
    def constant(us: int) -> "DelaySpec":
        return DelaySpec("constant", us, us)

    @staticmethod
    def uniform(lo: int, hi: int) -> "DelaySpec":
        return DelaySpec("uniform", lo, hi)

    def sample(self, rng: random.Random) -> int:
        if self.kind == "constant":
            return self.lo
        return rng.randint(self.lo, self.hi)


@dataclass(frozen=True)
class FaultEvent:
    """One scheduled fault. Actions: crash <node>, restart <node>,
    partition <group|group|...>, heal."""

    at: int
    action: str
    target: str = ""


def parse_fault_schedule(text: str) -> list[FaultEvent]:
    """Parse the fault schedule file format: one `<time_us> <action>
    [target]` per line; '#' starts a comment. Events are applied in
    timestamp order with ties broken by file order."""
    events = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(None, 2)
        if len(parts) < 2:
            raise ValueError(f"bad fault schedule line: {raw!r}")
        at, action = int(parts[0]), parts[1]
        if action not in ("crash", "restart", "partition", "heal"):
            raise ValueError(f"unknown fault action {action!r}")
        target = parts[2].strip() if len(parts) > 2 else ""
        events.append(FaultEvent(at, action, target))
    return sorted(events, key=lambda f: f.at)


@dataclass
class SimConfig:
    seed: int = 1
    delay: DelaySpec = field(default_factory=lambda: DelaySpec.constant(50))
    drop_rate: float = 0.0
    fault_schedule: list[FaultEvent] = field(default_factory=list)
    max_events: int = 20_000_000


class Trace:
    """Ordered structured records of everything observable in a run."""

    def __init__(self) -> None:
        self.records: list[dict] = []

    def append(self, rec: dict) -> None:
        self.records.append(rec)

    def to_lines(self) -> list[str]:
        return [json.dumps(r, sort_keys=True, separators=(",", ":")) for r in self.records]

    def write(self, path: str) -> None:
        with open(path, "w") as f:
            for line in self.to_lines():
                f.write(line + "\n")

    @staticmethod
    def parse_lines(lines) -> list[dict]:
        return [json.loads(line) for line in lines if line.strip()]


class Simulator:
    """Sequential event loop. Nodes are objects exposing
    on_message(sim, src, msg), on_timer(sim, kind, data) and optionally
    on_restart(sim)."""

    def __init__(self, config: SimConfig) -> None:
        self.config = config
        self.now = 0
        self.trace = Trace()
        self.nodes: dict[str, object] = {}
        self.crashed: set[str] = set()
        self._heap: list = []
        self._seq = 0
        self._mid = 0
        self._rngs: dict[tuple[str, str], random.Random] = {}
        self._partition: dict[str, int] = {}
        self._partitioned = False
        self._ctx_mid: Optional[int] = None  # message being processed now
        self.processed = 0
        self.crash_hooks: list[Callable[[str], None]] = []
        for fe in config.fault_schedule:
            self._push(fe.at, ("fault", fe))

    # -- plumbing ----------------------------------------------------------

    def add_node(self, node) -> None:
        self.nodes[node.node_id] = node

    def rng_for(self, node: str, purpose: str) -> random.Random:
        key = (node, purpose)
        rng = self._rngs.get(key)
        if rng is None:
            digest = hashlib.sha256(f"{self.config.seed}:{node}:{purpose}".encode()).digest()
            rng = random.Random(int.from_bytes(digest[:8], "big"))
            self._rngs[key] = rng
        return rng

    def _push(self, t: int, item) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, item))

    def record(self, kind: str, **fields) -> dict:
        rec = {"seq": self._next_rec_seq(), "t": self.now, "kind": kind}
        if self._ctx_mid is not None and "cause" not in fields:
            rec["cause"] = self._ctx_mid
        for k, v in fields.items():
            if v is not None:
                rec[k] = v
        self.trace.append(rec)
        return rec

    def _next_rec_seq(self) -> int:
        return len(self.trace.records)

    # -- network -----------------------------------------------------------

    def partitioned(self, a: str, b: str) -> bool:
        if not self._partitioned:
            return False
        return self._partition.get(a, -1) != self._partition.get(b, -1)

    def send(self, src: str, dst: str, msg: Message, root: bool = False, extra: Optional[dict] = None) -> None:
        """Queue one message. `root=True` cuts the causal chain: the send
        starts a new protocol phase rather than reacting to a delivery.
        `extra` fields are recorded on the send event for the auditors."""
        if src in self.crashed:
            return
        self._mid += 1
        mid = self._mid
        cause = None if root else self._ctx_mid
        summary = summarize_message(msg)
        if extra:
            summary.update(extra)
        self.record("send", src=src, dst=dst, mid=mid, cause=cause, **summary)
        if self.partitioned(src, dst):
            self.record("drop", src=src, dst=dst, mid=mid, reason="partition", msg=msg.kind, tid=msg.tid)
            return
        if self.config.drop_rate > 0 and self.rng_for(src, "net").random() < self.config.drop_rate:
            self.record("drop", src=src, dst=dst, mid=mid, reason="loss", msg=msg.kind, tid=msg.tid)
            return
        delay = self.config.delay.sample(self.rng_for(src, "net"))
        self._push(self.now + delay, ("deliver", src, dst, msg, mid))

    def set_timer(self, node: str, delay_us: int, kind: str, data=None) -> None:
        self._push(self.now + delay_us, ("timer", node, kind, data, self._ctx_mid))

    # -- faults ------------------------------------------------------------

    def inject(self, fault: FaultEvent) -> None:
        """Schedule a fault at fault.at (>= now)."""
        if fault.at < self.now:
            raise ValueError("fault scheduled in the past")
        self._push(fault.at, ("fault", fault))

    def _apply_fault(self, fe: FaultEvent) -> None:
        if fe.action == "crash":
            self.record("crash", node=fe.target)
            self.crashed.add(fe.target)
            for hook in self.crash_hooks:
                hook(fe.target)
        elif fe.action == "restart":
            self.record("restart", node=fe.target)
            self.crashed.discard(fe.target)
            node = self.nodes.get(fe.target)
            if node is not None and hasattr(node, "on_restart"):
                node.on_restart(self)
        elif fe.action == "partition":
            self._partition = {}
            for gid, group in enumerate(fe.target.split("|")):
                for name in group.split(","):
                    name = name.strip()
                    if name:
                        self._partition[name] = gid
            self._partitioned = True
            self.record("partition", groups=fe.target)
        elif fe.action == "heal":
            self._partition = {}
            self._partitioned = False
            self.record("heal")
        else:
            raise ValueError(f"unknown fault action {fe.action!r}")

    # -- main loop ---------------------------------------------------------

    def run_until(self, t_limit: Optional[int] = None, stop: Optional[Callable[[], bool]] = None) -> None:
        """Process events until the horizon (or quiescence when t_limit
        is None). The event budget guards against livelock."""
        while self._heap:
            t = self._heap[0][0]
            if t_limit is not None and t > t_limit:
                break
            if self.processed >= self.config.max_events:
                raise LivelockError(f"exceeded {self.config.max_events} events at t={self.now}")
            _, _, item = heapq.heappop(self._heap)
            self.now = max(self.now, t)
            self.processed += 1
            self._dispatch(item)
            if stop is not None and stop():
                break
        if t_limit is not None:
            self.now = max(self.now, t_limit)

    def _dispatch(self, item) -> None:
        kind = item[0]
        if kind == "deliver":
            _, src, dst, msg, mid = item
            if dst in self.crashed:
                self.record("discard", node=dst, src=src, mid=mid, reason="crashed", msg=msg.kind, tid=msg.tid)
                return
            node = self.nodes.get(dst)
            if node is None:
                return
            self.record("deliver", node=dst, src=src, mid=mid, **summarize_message(msg))
            self._ctx_mid = mid
            try:
                node.on_message(self, src, msg)
            finally:
                self._ctx_mid = None
        elif kind == "timer":
            _, name, tkind, data, cause = item
            if name in self.crashed:
                return
            node = self.nodes.get(name)
            if node is None:
                return
            self._ctx_mid = cause
            try:
                node.on_timer(self, tkind, data)
            finally:
                self._ctx_mid = None
        elif kind == "fault":
            self._apply_fault(item[1])
