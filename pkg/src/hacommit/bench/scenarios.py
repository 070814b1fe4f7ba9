"""Scripted fault scenarios used by the acceptance suite and the CLI.

Each scenario wires its own topology, drives a hand-written client
script, and returns everything the assertions need (tids, trace, sim).
"""
from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from typing import Optional

from ..baselines import TpcClient, TpcParticipant
from ..client import ClientNode
from ..config import ProtocolConfig
from ..core import write_op
from ..participant import ParticipantReplica
from ..simnet import DelaySpec, FaultEvent, SimConfig, Simulator
from ..store import load_keys
from ..topology import ShardMap, client_node, replica_node
from .experiment import RunResult, build_store, run_experiment
from .workload import WorkloadSpec

US_PER_S = 1_000_000


@dataclass
class ScenarioResult:
    sim: Simulator
    shard_map: ShardMap
    voted_tids: list = field(default_factory=list)
    committed_tid: Optional[str] = None
    blocked_tid: Optional[str] = None

    @property
    def records(self) -> list[dict]:
        return self.sim.trace.records


class RepairScriptClient(ClientNode):
    """Leaves nine transactions voted-but-undecided, commits a tenth
    whose decision reaches only three of the five replicas, then
    crashes. Recovery has to finish all ten."""

    def __init__(self, node_id, shard_map, cfg, result: ScenarioResult, key_space: int) -> None:
        super().__init__(node_id, shard_map, cfg)
        self.result = result
        self.key_space = key_space

    def session(self, sim):
        keys = load_keys(self.key_space)
        for i in range(9):
            txn = self.begin(sim)
            votes = yield from self.finish_execution(sim, txn, write_op(keys[i], b"dangling--"))
            assert votes is not None, "vote round must finish fault-free"
            self.result.voted_tids.append(txn.tid)
        txn = self.begin(sim)
        votes = yield from self.finish_execution(sim, txn, write_op(keys[9], b"lastwrite-"))
        assert votes is not None
        self.result.committed_tid = txn.tid
        # cut off the two replicas that must later learn the commit
        # through recovery, decide, then die before telling anyone else
        left = ",".join([self.node_id] + [replica_node(0, i) for i in range(3)])
        right = ",".join(replica_node(0, i) for i in range(3, 5))
        sim.inject(FaultEvent(at=sim.now, action="partition", target=f"{left}|{right}"))
        yield ("sleep", 10)
        outcome = yield from self.commit(sim, txn)
        assert outcome == "committed", outcome
        sim.inject(FaultEvent(at=sim.now, action="crash", target=self.node_id))
        sim.inject(FaultEvent(at=sim.now + US_PER_S, action="heal"))


def client_failure_repair(seed: int = 7, timeout_us: int = 15 * US_PER_S) -> ScenarioResult:
    """One shard, five replicas. Mirrors the repair timeline: the
    lowest-ranked replica aborts the nine undecided transactions, a
    later-ranked one re-proposes and applies the quorum-accepted commit,
    and the last replica finds everything already applied."""
    cfg = ProtocolConfig(timeout_us=timeout_us)
    sim = Simulator(SimConfig(seed=seed, delay=DelaySpec("constant", 50, 50)))
    shard_map = ShardMap(shards=1, replicas=5)
    key_space = 16
    sim.record(
        "meta",
        protocol="hacommit",
        seed=seed,
        shards=1,
        replicas=5,
        clients=1,
        key_space=key_space,
        value_size=10,
        isolation=cfg.isolation,
        one_way_us=cfg.one_way_us,
        timeout_us=cfg.timeout_us,
    )
    for i in range(5):
        node_id = replica_node(0, i)
        sim.nodes[node_id] = ParticipantReplica(node_id, 0, shard_map, build_store(cfg, seed, key_space, 10), cfg)
    result = ScenarioResult(sim=sim, shard_map=shard_map)
    client = RepairScriptClient(client_node(0), shard_map, cfg, result, key_space)
    sim.nodes[client.node_id] = client
    client.start(sim)
    sim.run_until(int(timeout_us * 2.5))
    return result


def replica_failure_timeline(
    seed: int = 11,
    crash_times_s: tuple = (50, 100, 180),
    duration_s: int = 240,
    think_time_us: int = 40_000,
    clients: int = 2,
) -> RunResult:
    """One shard, five replicas, a crash per scheduled time. Commits
    must flow until the third crash costs the group its quorum, then
    stop; safety must hold throughout."""
    spec = WorkloadSpec(
        duration_s=duration_s,
        ops_per_txn=2,
        read_fraction=0.5,
        key_space=1_000,
        clients=clients,
        think_time_us=think_time_us,
    )
    faults = tuple(
        FaultEvent(at=t * US_PER_S, action="crash", target=replica_node(0, i + 1))
        for i, t in enumerate(crash_times_s)
    )
    return run_experiment(spec, protocol="hacommit", seed=seed, shards=1, replicas=5, fault_schedule=faults)


class BlockingScriptClient(TpcClient):
    """2PC coordinator that dies between collecting the votes and
    broadcasting the decision: the textbook blocking window."""

    def session(self, sim):
        keys = load_keys(16)
        txn = self.begin(sim)
        votes = yield from self.finish_execution(sim, txn, write_op(keys[0], b"halfway---"))
        assert votes is not None
        # the decision never leaves this node
        sim.inject(FaultEvent(at=sim.now + 1, action="crash", target=self.node_id))
        outcome = yield from self.commit(sim, txn)
        raise AssertionError(f"unreachable: {outcome}")


def tpc_blocking(seed: int = 3) -> ScenarioResult:
    cfg = ProtocolConfig()
    sim = Simulator(SimConfig(seed=seed, delay=DelaySpec("constant", 50, 50)))
    shard_map = ShardMap(shards=1, replicas=1)
    key_space = 16
    sim.record(
        "meta",
        protocol="2pc",
        seed=seed,
        shards=1,
        replicas=1,
        clients=1,
        key_space=key_space,
        value_size=10,
        isolation=cfg.isolation,
        one_way_us=cfg.one_way_us,
        timeout_us=cfg.timeout_us,
    )
    node_id = replica_node(0, 0)
    sim.nodes[node_id] = TpcParticipant(node_id, 0, shard_map, build_store(cfg, seed, key_space, 10), cfg)
    result = ScenarioResult(sim=sim, shard_map=shard_map)
    client = BlockingScriptClient(client_node(0), shard_map, cfg)
    sim.nodes[client.node_id] = client
    client.start(sim)
    sim.run_until(5 * US_PER_S)
    blocked = [t for t in sim.nodes[node_id].states if sim.nodes[node_id].states[t].vote is not None]
    result.blocked_tid = blocked[0] if blocked else None
    return result


def random_fault_run(protocol: str, seed: int, txn_count: int = 40) -> RunResult:
    """One short workload under a seed-derived fault mix: replica crashes,
    an occasional client crash, a partition episode, random drops. Fault
    times sit inside the first 400ms so they land mid-workload.

    The mix intentionally includes runs that lose a replica quorum or the
    coordinator; those stall or leave blocked participants, which the
    audit reports as findings, never violations.
    """
    digest = hashlib.sha256(f"faultmix:{protocol}:{seed}".encode()).digest()
    rng = random.Random(int.from_bytes(digest[:8], "big"))
    shards, replicas, clients = 2, 3, 2
    replica_names = [replica_node(s, r) for s in range(shards) for r in range(replicas)]
    faults: list[FaultEvent] = []
    for target in rng.sample(replica_names, rng.choice((0, 1, 1, 2))):
        faults.append(FaultEvent(at=rng.randrange(1_000, 400_000), action="crash", target=target))
    if rng.random() < 0.25:
        faults.append(FaultEvent(at=rng.randrange(1_000, 300_000), action="crash", target=client_node(0)))
    if rng.random() < 0.40:
        cut = rng.randrange(2_000, 250_000)
        pool = replica_names + [client_node(i) for i in range(clients)]
        rng.shuffle(pool)
        split = rng.randrange(1, len(pool))
        cells = ",".join(pool[:split]) + "|" + ",".join(pool[split:])
        faults.append(FaultEvent(at=cut, action="partition", target=cells))
        faults.append(FaultEvent(at=cut + rng.randrange(50_000, 200_000), action="heal"))
    drop_rate = rng.choice((0.0, 0.0, 0.0, 0.01, 0.03))
    cfg = ProtocolConfig(timeout_us=150_000, reply_timeout_us=50_000)
    spec = WorkloadSpec(
        txn_count=txn_count,
        ops_per_txn=2,
        read_fraction=0.5,
        key_space=64,
        clients=clients,
        value_size=10,
    )
    return run_experiment(
        spec,
        protocol=protocol,
        seed=seed,
        shards=shards,
        replicas=replicas,
        cfg=cfg,
        drop_rate=drop_rate,
        fault_schedule=tuple(sorted(faults, key=lambda f: f.at)),
        t_limit_us=2 * US_PER_S,
    )
