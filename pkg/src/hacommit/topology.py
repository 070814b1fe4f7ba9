"""Shard-to-replica-group mapping and node naming.

One simulated node hosts exactly one shard replica (or is a client /
coordinator-group member), which keeps message routing unambiguous.
Leader succession is deterministic: when a leader crashes the fault
injector promotes the next live member in list order, standing in for
an external leader service.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field

COORD_GROUP = "coord"


@dataclass
class ReplicaGroup:
    """The replicas of one shard (or of the baseline coordinator)."""

    name: str
    members: tuple[str, ...]
    leader_idx: int = 0

    @property
    def quorum_size(self) -> int:
        return len(self.members) // 2 + 1

    @property
    def leader(self) -> str:
        return self.members[self.leader_idx]

    def rank(self, node: str) -> int:
        return self.members.index(node)


def replica_node(shard: int, idx: int) -> str:
    return f"s{shard}r{idx}"


def client_node(idx: int) -> str:
    return f"c{idx}"


def coord_node(idx: int) -> str:
    return f"coord{idx}"


class ShardMap:
    """Routing state shared by every role: key placement, group
    membership, and the current leader of each group."""

    def __init__(self, shards: int, replicas: int) -> None:
        self.shards = shards
        self.replicas = replicas
        self.groups: dict[str, ReplicaGroup] = {}
        self._group_of: dict[str, str] = {}
        for s in range(shards):
            members = tuple(replica_node(s, i) for i in range(replicas))
            self._add_group(ReplicaGroup(f"s{s}", members))

    def _add_group(self, group: ReplicaGroup) -> None:
        self.groups[group.name] = group
        for m in group.members:
            self._group_of[m] = group.name

    def add_coord_group(self, members: tuple[str, ...]) -> ReplicaGroup:
        group = ReplicaGroup(COORD_GROUP, members)
        self._add_group(group)
        return group

    def key_to_shard(self, key: str) -> int:
        return zlib.crc32(key.encode()) % self.shards

    def shard_group(self, shard: int) -> ReplicaGroup:
        return self.groups[f"s{shard}"]

    def leader_of(self, shard: int) -> str:
        return self.shard_group(shard).leader

    def group_of(self, node: str) -> str | None:
        return self._group_of.get(node)

    def all_replicas(self, shard_ids) -> list[str]:
        nodes: list[str] = []
        for s in shard_ids:
            nodes.extend(self.shard_group(s).members)
        return nodes

    def replica_nodes(self) -> list[str]:
        return [m for s in range(self.shards) for m in self.shard_group(s).members]

    def handle_crash(self, node: str, crashed: set[str]) -> list[tuple[str, str]]:
        """Advance leadership past crashed members. Returns the list of
        (group, new_leader) successions that took place."""
        changes = []
        for group in self.groups.values():
            if group.leader != node:
                continue
            n = len(group.members)
            for step in range(1, n + 1):
                candidate = (group.leader_idx + step) % n
                if group.members[candidate] not in crashed:
                    group.leader_idx = candidate
                    changes.append((group.name, group.leader))
                    break
        return changes
