"""Experiment orchestration: topology wiring, run loop, sweeps.

One call builds the whole simulated system for a protocol mode, drives
the workload to its horizon, and returns metrics plus the full event
trace for auditing. Everything is derived from one seed integer.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from ..baselines import RcCoordBackup, RcParticipant, RcWorkloadClient, TpcParticipant, TpcWorkloadClient
from ..client import WorkloadClient
from ..config import ProtocolConfig
from ..participant import ParticipantReplica
from ..simnet import DelaySpec, FaultEvent, SimConfig, Simulator, Trace
from ..store import KVStore, READ_COMMITTED
from ..topology import ShardMap, client_node, coord_node, replica_node
from .audit import audit_trace, commit_delay_counts
from .metrics import Metrics, csv_header
from .workload import WorkloadSpec, generate

PROTOCOLS = ("hacommit", "hacommit-rc", "2pc", "rcommit")

US_PER_S = 1_000_000


@dataclass
class RunResult:
    protocol: str
    seed: int
    metrics: Metrics
    trace: Trace
    sim: Simulator
    shard_map: ShardMap
    clients: list = field(default_factory=list)

    def audit(self):
        return audit_trace(self.trace.records, self.metrics.msg_delays_per_commit())


def build_store(cfg: ProtocolConfig, seed: int, key_space: int, value_size: int) -> KVStore:
    store = KVStore(vote_check=cfg.vote_check)
    store.load(key_space, value_size, seed)
    return store


def run_experiment(
    spec: WorkloadSpec,
    protocol: str = "hacommit",
    seed: int = 0,
    shards: int = 2,
    replicas: int = 3,
    cfg: Optional[ProtocolConfig] = None,
    delay: Optional[DelaySpec] = None,
    drop_rate: float = 0.0,
    fault_schedule: Sequence[FaultEvent] = (),
    t_limit_us: Optional[int] = None,
    max_events: int = 20_000_000,
) -> RunResult:
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
    delay = delay or DelaySpec("constant", 50, 50)
    if cfg is None:
        cfg = ProtocolConfig()
    isolation = READ_COMMITTED if protocol == "hacommit-rc" else spec.isolation
    cfg = replace(cfg, isolation=isolation)
    cfg = cfg.with_one_way(delay.lo if delay.kind == "constant" else (delay.lo + delay.hi) // 2)
    if protocol == "2pc":
        replicas = 1  # plain 2PC runs unreplicated

    sim = Simulator(SimConfig(seed=seed, delay=delay, drop_rate=drop_rate, fault_schedule=tuple(fault_schedule), max_events=max_events))
    shard_map = ShardMap(shards, replicas)
    sim.record(
        "meta",
        protocol=protocol,
        seed=seed,
        shards=shards,
        replicas=replicas,
        clients=spec.clients,
        key_space=spec.key_space,
        value_size=spec.value_size,
        isolation=cfg.isolation,
        ops_per_txn=spec.ops_per_txn,
        read_fraction=spec.read_fraction,
        one_way_us=cfg.one_way_us,
        drop_rate=drop_rate,
        timeout_us=cfg.timeout_us,
    )

    participant_cls = {
        "hacommit": ParticipantReplica,
        "hacommit-rc": ParticipantReplica,
        "2pc": TpcParticipant,
        "rcommit": RcParticipant,
    }[protocol]
    for s in range(shards):
        for i in range(replicas):
            node_id = replica_node(s, i)
            store = build_store(cfg, seed, spec.key_space, spec.value_size)
            sim.nodes[node_id] = participant_cls(node_id, s, shard_map, store, cfg)

    backups: tuple[str, ...] = ()
    if protocol == "rcommit" and replicas > 1:
        backups = tuple(coord_node(i) for i in range(1, replicas))
        for b in backups:
            sim.nodes[b] = RcCoordBackup(b, shard_map, cfg)

    metrics = Metrics(protocol=protocol, ops_per_txn=spec.ops_per_txn, seed=seed)
    clients = []
    for idx in range(spec.clients):
        cid = client_node(idx)
        stream = generate(spec, seed, idx)
        if protocol == "2pc":
            node = TpcWorkloadClient(cid, shard_map, cfg, stream, metrics, spec.think_time_us)
        elif protocol == "rcommit":
            node = RcWorkloadClient(cid, shard_map, cfg, stream, metrics, backups=backups, think_time_us=spec.think_time_us)
        else:
            node = WorkloadClient(cid, shard_map, cfg, stream, metrics, spec.think_time_us)
        sim.nodes[cid] = node
        clients.append(node)

    def on_crash(node_id: str) -> None:
        for group, leader in shard_map.handle_crash(node_id, sim.crashed):
            sim.record("leader_change", group=group, leader=leader)

    sim.crash_hooks.append(on_crash)

    for c in clients:
        c.start(sim)

    if t_limit_us is None and spec.duration_s is not None:
        t_limit_us = int(spec.duration_s * US_PER_S)
    sim.run_until(t_limit_us)

    metrics.horizon_us = t_limit_us
    metrics.elide_quarters = spec.duration_s is not None
    metrics.delay_counts = commit_delay_counts(sim.trace.records)
    return RunResult(
        protocol=protocol,
        seed=seed,
        metrics=metrics,
        trace=sim.trace,
        sim=sim,
        shard_map=shard_map,
        clients=clients,
    )


def sweep(
    protocols: Sequence[str],
    ops_values: Sequence[int],
    seeds: Sequence[int],
    txn_count: int = 30,
    read_fraction: float = 0.0,
    shards: int = 2,
    replicas: int = 3,
    key_space: int = 10_000,
    clients: int = 1,
    cfg: Optional[ProtocolConfig] = None,
) -> list[Metrics]:
    """Cross product of protocol x ops_per_txn x seed, one run each."""
    out = []
    for protocol in protocols:
        for ops in ops_values:
            for seed in seeds:
                spec = WorkloadSpec(
                    txn_count=txn_count,
                    ops_per_txn=ops,
                    read_fraction=read_fraction,
                    key_space=key_space,
                    clients=clients,
                )
                result = run_experiment(
                    spec,
                    protocol=protocol,
                    seed=seed,
                    shards=shards,
                    replicas=replicas,
                    cfg=replace(cfg) if cfg is not None else None,
                )
                out.append(result.metrics)
    return out


def to_csv(metrics_list: Sequence[Metrics]) -> str:
    return "\n".join([csv_header(), *[m.csv_row() for m in metrics_list]]) + "\n"
