"""Consistent-hashing assignment of hosts to agents."""

from __future__ import annotations

import bisect
import threading
from collections.abc import Iterable

import mmh3

from hostwise.core.constants import HASH_SEED

RING_SIZE = 2**64


class EmptyRing(LookupError):
    """No agent is on the ring."""


def _hash(data: bytes) -> int:
    return mmh3.hash64(data, HASH_SEED, signed=False)[0]


class AgentRing:
    """Agents placed on a 64-bit hash circle, ``virtual_nodes`` points each.

    The circle is cut into ``virtual_nodes`` equal arcs and replica ``i`` of
    every agent lands inside arc ``i``, at an offset given by the hash of
    the agent id and ``i``.  A host belongs to the first point at or after
    its own hash.  Points depend only on their agent, so removing an agent
    moves only the hosts it owned.
    """

    def __init__(self, agents: Iterable[str] = (), virtual_nodes: int = 128) -> None:
        if virtual_nodes < 1:
            raise ValueError("virtual_nodes must be positive")
        self.virtual_nodes = virtual_nodes
        self.version = 0
        self._points: list[int] = []
        self._owners: list[str] = []
        self._agents: set[str] = set()
        self._lock = threading.Lock()
        for agent in agents:
            self.add(agent)

    def _agent_points(self, agent: str) -> list[int]:
        arc = RING_SIZE // self.virtual_nodes
        return [
            i * arc + _hash(f"{agent}:{i}".encode()) % arc for i in range(self.virtual_nodes)
        ]

    def add(self, agent: str) -> None:
        with self._lock:
            if agent in self._agents:
                return
            self._agents.add(agent)
            for point in self._agent_points(agent):
                index = bisect.bisect_left(self._points, point)
                self._points.insert(index, point)
                self._owners.insert(index, agent)
            self.version += 1

    def remove(self, agent: str) -> None:
        with self._lock:
            if agent not in self._agents:
                return
            self._agents.discard(agent)
            kept = [(p, o) for p, o in zip(self._points, self._owners) if o != agent]
            self._points = [p for p, _ in kept]
            self._owners = [o for _, o in kept]
            self.version += 1

    @property
    def agents(self) -> frozenset[str]:
        return frozenset(self._agents)

    def __len__(self) -> int:
        return len(self._agents)

    def assign(self, host: bytes) -> str:
        """Owner of a host name.

        Raises:
            EmptyRing: If no agent is on the ring.
        """
        with self._lock:
            if not self._points:
                raise EmptyRing("no agents on the ring")
            index = bisect.bisect_left(self._points, _hash(host))
            return self._owners[index % len(self._points)]


__all__ = ["AgentRing", "EmptyRing"]
