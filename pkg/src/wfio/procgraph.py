"""Process tree and cgroup membership of one node, rebuilt from fork events.

A pid may be reused, so a process is identified by ``(pid, birth_time)``.
A query at time t resolves a pid to its latest birth not later than t.
Parents that never appear as a fork child become implicit roots with birth
time ``-inf`` and unknown cgroup.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .model import ForkEvent

NEG_INF = -math.inf
ProcKey = tuple[int, float]  # (pid, birth time)


@dataclass(frozen=True)
class Birth:
    pid: int
    time: float
    parent: ProcKey | None
    cgroupid: int | None  # None for implicit roots


@dataclass
class ProcessGraph:
    node_id: str = ""
    births: dict[int, list[Birth]] = field(default_factory=dict)
    _times: dict[int, list[float]] = field(default_factory=dict, repr=False)
    children: dict[ProcKey, list[ProcKey]] = field(default_factory=dict, repr=False)
    by_cgroup: dict[int, list[ProcKey]] = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        # implicit roots are not births
        return sum(b.parent is not None for bs in self.births.values() for b in bs)

    def birth_at(self, pid: int, at_time: float) -> Birth | None:
        times = self._times.get(pid)
        if times is None:
            return None
        if len(times) == 1:  # fast path, no reuse
            return self.births[pid][0] if times[0] <= at_time else None
        i = bisect.bisect_right(times, at_time)
        return self.births[pid][i - 1] if i else None

    def key_at(self, pid: int, at_time: float) -> ProcKey:
        """Identity of the process holding pid at at_time; unknown pids map
        to ``(pid, -inf)``."""
        b = self.birth_at(pid, at_time)
        return (pid, b.time) if b is not None else (pid, NEG_INF)

    def cgroup_of(self, pid: int, at_time: float) -> int | None:
        b = self.birth_at(pid, at_time)
        return b.cgroupid if b is not None else None

    def subtree(self, key: ProcKey, until: float = math.inf) -> Iterator[ProcKey]:
        """key and its transitive children born no later than until."""
        stack = [key]
        while stack:
            k = stack.pop()
            yield k
            for c in self.children.get(k, ()):
                if c[1] <= until:
                    stack.append(c)

    def descendants(self, pid: int, at_time: float) -> set[int]:
        return {k[0] for k in self.subtree(self.key_at(pid, at_time), at_time)}

    def members(self, cgroupid: int) -> list[ProcKey]:
        return list(self.by_cgroup.get(cgroupid, ()))


def build_process_graph(forks: Iterable[ForkEvent], node_id: str = "") -> ProcessGraph:
    """Forks must be time-sorted (ingest guarantees this)."""
    g = ProcessGraph(node_id)
    for f in forks:
        parent_birth = g.birth_at(f.parent_pid, f.time)
        if parent_birth is None:
            parent = (f.parent_pid, NEG_INF)
            if f.parent_pid not in g._times:
                g.births.setdefault(f.parent_pid, []).insert(0, Birth(f.parent_pid, NEG_INF, None, None))
                g._times.setdefault(f.parent_pid, []).insert(0, NEG_INF)
        else:
            parent = (f.parent_pid, parent_birth.time)
        times = g._times.setdefault(f.pid, [])
        if times and f.time < times[-1]:
            raise ValueError(f"fork events out of time order at pid {f.pid}")
        times.append(f.time)
        g.births.setdefault(f.pid, []).append(Birth(f.pid, f.time, parent, f.cgroupid))
        key = (f.pid, f.time)
        g.children.setdefault(parent, []).append(key)
        g.by_cgroup.setdefault(f.cgroupid, []).append(key)
    return g
