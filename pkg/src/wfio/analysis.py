"""Per-task I/O metrics computed from an attribution.

A file inside a task is identified by ``(node_id, inode_uid)``; its path is
taken from the Open of the handle (or any Open/Delete of the inode on that
node). Only Read and Write events count as accesses when measuring how long
a task keeps touching a file.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

from .association import Attribution
from .model import IoEvent, Kind, NodeTrace, event_identity_check

FileKey = tuple[str, int]  # (node_id, inode_uid)
_LETTER = {k: k.value for k in Kind}


class NoObservedIo(LookupError):
    pass


class TimelineRow(NamedTuple):
    t_rel: float
    kind: str
    offset: int
    size: int


@dataclass
class FileRow:
    node_id: str
    inode_uid: int
    path: str
    bytes_read: int = 0
    bytes_written: int = 0
    ops: dict[str, int] = field(default_factory=lambda: {k.value: 0 for k in Kind})
    handles: int = 0
    first_access: float | None = None
    last_access: float | None = None
    first_read: float | None = None
    first_write: float | None = None
    span_fraction: float | None = None

    @property
    def key(self) -> FileKey:
        return (self.node_id, self.inode_uid)


@dataclass
class TaskIoProfile:
    task_id: int
    t0: float
    t1: float
    events: int
    files: list[FileRow]
    timelines: dict[FileKey, list[TimelineRow]]

    @property
    def runtime(self) -> float:
        return self.t1 - self.t0

    @property
    def bytes_read(self) -> int:
        return sum(f.bytes_read for f in self.files)

    @property
    def bytes_written(self) -> int:
        return sum(f.bytes_written for f in self.files)

    def file(self, which: str | int | FileKey) -> FileRow:
        """Look a file up by path, inode uid or (node, inode)."""
        if isinstance(which, tuple):
            rows = [f for f in self.files if f.key == which]
        elif isinstance(which, int):
            rows = [f for f in self.files if f.inode_uid == which]
        else:
            rows = [f for f in self.files if f.path == which]
        if not rows:
            raise KeyError(f"task {self.task_id} never touched {which!r}")
        if len(rows) > 1:
            raise KeyError(f"{which!r} is ambiguous in task {self.task_id}; use (node, inode)")
        return rows[0]


@dataclass(frozen=True, order=True)
class LineageEdge:
    path: str
    producer: int
    consumer: int
    producer_node: str
    producer_inode: int
    consumer_node: str
    consumer_inode: int


class _PathIndex:
    """handle -> path and inode -> path for one node trace."""

    def __init__(self, trace: NodeTrace):
        self.by_handle: dict[int, str] = {}
        self.by_inode: dict[int, str] = {}
        for ev in trace.io_events:
            if ev.path:
                if ev.kind is Kind.OPEN:
                    self.by_handle[ev.handle_uid] = ev.path
                self.by_inode.setdefault(ev.inode_uid, ev.path)

    def path_of(self, ev: IoEvent) -> str:
        if ev.path:
            return ev.path
        return self.by_handle.get(ev.handle_uid) or self.by_inode.get(ev.inode_uid, "")


def _rel(t: float, t0: float, span: float) -> float:
    return (t - t0) / span if span > 0 else 0.0


def build_profile(task_id: int, events: Sequence[tuple[str, IoEvent]],
                  paths: dict[str, _PathIndex]) -> TaskIoProfile:
    if not events:
        raise NoObservedIo(f"task {task_id} has no attributed events")
    t0 = min(ev.time_start for _, ev in events)
    t1 = max(ev.time_end for _, ev in events)
    span = t1 - t0
    rows: dict[FileKey, FileRow] = {}
    handles: dict[FileKey, set[int]] = defaultdict(set)
    data_events: dict[FileKey, list[IoEvent]] = defaultdict(list)
    for node, ev in events:
        key = (node, ev.inode_uid)
        row = rows.get(key)
        if row is None:
            row = rows[key] = FileRow(node, ev.inode_uid, paths[node].path_of(ev))
        elif not row.path:
            row.path = paths[node].path_of(ev)
        k = ev.kind
        row.ops[k] += 1  # Kind is a str enum, so it hashes like its letter
        if ev.handle_uid:
            handles[key].add(ev.handle_uid)
        if k is Kind.READ:
            row.bytes_read += ev.result
            if row.first_read is None or ev.time_start < row.first_read:
                row.first_read = ev.time_start
        elif k is Kind.WRITE:
            row.bytes_written += ev.result
            if row.first_write is None or ev.time_start < row.first_write:
                row.first_write = ev.time_start
        else:
            continue
        data_events[key].append(ev)
        if row.first_access is None or ev.time_start < row.first_access:
            row.first_access = ev.time_start
        if row.last_access is None or ev.time_end > row.last_access:
            row.last_access = ev.time_end

    timelines = {}
    for key, row in rows.items():
        row.handles = len(handles[key])
        if row.first_access is not None:
            row.span_fraction = _rel(row.last_access, row.first_access, span)
            evs = sorted(data_events[key], key=lambda e: e.time_start)
            timelines[key] = [TimelineRow(_rel(e.time_start, t0, span), _LETTER[e.kind], e.offset, e.size)
                              for e in evs]
    files = sorted(rows.values(), key=lambda r: (r.node_id, r.path, r.inode_uid))
    return TaskIoProfile(task_id, t0, t1, len(events), files, timelines)


def _task_events(attribution: Attribution) -> dict[int, list[tuple[str, IoEvent]]]:
    out: dict[int, list[tuple[str, IoEvent]]] = defaultdict(list)
    for node in sorted(attribution.labels):
        evs = attribution.traces[node].io_events
        for ev, t in zip(evs, attribution.labels[node]):
            if t is not None:
                out[t].append((node, ev))
    return out


def _path_indexes(attribution: Attribution) -> dict[str, _PathIndex]:
    return {n: _PathIndex(t) for n, t in attribution.traces.items()}


def compute_profiles(attribution: Attribution, task_ids: Iterable[int] | None = None) -> dict[int, TaskIoProfile]:
    """Profiles for every task with at least one attributed event."""
    grouped = _task_events(attribution)
    paths = _path_indexes(attribution)
    wanted = sorted(grouped) if task_ids is None else sorted(set(task_ids) & set(grouped))
    return {t: build_profile(t, grouped[t], paths) for t in wanted}


def task_profile(attribution: Attribution, task_id: int) -> TaskIoProfile:
    evs = _task_events(attribution).get(task_id, [])
    return build_profile(task_id, evs, _path_indexes(attribution))


def task_runtime(attribution: Attribution, task_id: int) -> tuple[float, float]:
    p = task_profile(attribution, task_id)
    return (p.t0, p.t1)


def span_fraction(attribution: Attribution, task_id: int, file: str | int | FileKey) -> float:
    row = task_profile(attribution, task_id).file(file)
    if row.span_fraction is None:
        raise KeyError(f"task {task_id} never read or wrote {file!r}")
    return row.span_fraction


def access_timeline(attribution: Attribution, task_id: int, file: str | int | FileKey) -> list[TimelineRow]:
    p = task_profile(attribution, task_id)
    return p.timelines.get(p.file(file).key, [])


def bulkiness_histogram(profiles: Iterable[TaskIoProfile], bucket_count: int = 10) -> list[int]:
    """Counts of per-(task, file) span fractions in equal bins over [0, 1]."""
    if bucket_count < 1:
        raise ValueError("bucket_count must be >= 1")
    counts = [0] * bucket_count
    for p in profiles:
        for f in p.files:
            if f.span_fraction is not None:
                counts[min(int(f.span_fraction * bucket_count), bucket_count - 1)] += 1
    return counts


def cross_task_lineage(attribution: Attribution, profiles: dict[int, TaskIoProfile]) -> list[LineageEdge]:
    """Producer -> consumer edges for files written by one task and read later
    by another. Same node: match on inode; across nodes: match on path."""
    writers_inode: dict[FileKey, list[tuple[int, FileRow]]] = defaultdict(list)
    writers_path: dict[str, list[tuple[int, FileRow]]] = defaultdict(list)
    for tid, p in profiles.items():
        for f in p.files:
            if f.first_write is not None:
                writers_inode[f.key].append((tid, f))
                if f.path:
                    writers_path[f.path].append((tid, f))
    edges = set()
    for tid, p in profiles.items():
        for f in p.files:
            if f.first_read is None:
                continue
            cands = list(writers_inode.get(f.key, ()))
            if f.path:
                cands += [(t, w) for t, w in writers_path.get(f.path, ()) if w.node_id != f.node_id]
            for wtid, w in cands:
                if wtid != tid and w.first_write < f.first_read:
                    edges.add(LineageEdge(w.path or f.path, wtid, tid, w.node_id, w.inode_uid,
                                          f.node_id, f.inode_uid))
    return sorted(edges)


# -- loss accounting --------------------------------------------------------------------

PRE_EXISTING = "PreExistingHandle"
LOST_RECORD = "LostRecord"


@dataclass
class NodeLoss:
    node_id: str
    events: int
    orphan_events: int
    orphan_handles: int
    orphan_cause: str | None
    unattributed_events: int
    loss_warning: bool


@dataclass
class LossReport:
    nodes: list[NodeLoss]

    @property
    def orphan_events(self) -> int:
        return sum(n.orphan_events for n in self.nodes)

    @property
    def orphan_handles(self) -> int:
        return sum(n.orphan_handles for n in self.nodes)

    @property
    def unattributed_events(self) -> int:
        return sum(n.unattributed_events for n in self.nodes)


def loss_report(traces: Iterable[NodeTrace], attribution: Attribution | None = None) -> LossReport:
    """Count references to handles never opened in the trace.

    Such references come from records the tracer dropped or from handles
    opened before tracing started. When the node carries a ring-buffer
    overflow warning they are attributed to lost records, otherwise to
    pre-existing handles.
    """
    nodes = []
    for trace in sorted(traces, key=lambda t: t.node_id):
        orphans = [v for v in event_identity_check(trace) if v.kind == "OrphanHandle"]
        handles = {v.handle_uid for v in orphans}
        cause = None
        if orphans:
            cause = LOST_RECORD if trace.loss_warning else PRE_EXISTING
        if attribution is not None and trace.node_id in attribution.labels:
            unattributed = sum(t is None for t in attribution.labels[trace.node_id])
        else:
            unattributed = len(trace.io_events)
        nodes.append(NodeLoss(trace.node_id, len(trace.io_events), len(orphans), len(handles),
                              cause, unattributed, trace.loss_warning))
    return LossReport(nodes)
