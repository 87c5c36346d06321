"""Link low-level events to workflow tasks.

Two sources of evidence bind a task to processes on a node:

* a process opens a Nextflow-private file (``.command.sh``, ``.exitcode``,
  ...) directly inside a task's work dir. Its cgroup is bound to the task;
  outside containers (cgroup 0 or unknown) the process and all its fork
  descendants are bound instead.
* a Kubernetes pod carries a ``taskName`` label; the pod's cgroup on its node
  is bound to the task with the same normalized name.

Every I/O event is then labelled with the task bound to its cgroup, failing
that to its process, or left unattributed.
"""
from __future__ import annotations

import enum
import fnmatch
import re
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .model import Kind, NodeTrace, PodMeta, TaskRecord
from .procgraph import NEG_INF, Birth, ProcessGraph, build_process_graph


class Method(str, enum.Enum):
    WORKDIR_MARKER = "WorkDirMarker"
    PROCESS_SUBTREE = "ProcessSubtree"
    POD_LABEL = "PodLabel"


# lower wins when two sources disagree
PRECEDENCE = {Method.WORKDIR_MARKER: 0, Method.PROCESS_SUBTREE: 1, Method.POD_LABEL: 2}

DEFAULT_MARKERS = (".command.sh", ".command.run", ".command.begin", ".exitcode")
UNBOUND = "Unbound"


class AssociationError(ValueError):
    pass


@dataclass(frozen=True)
class MarkerRule:
    patterns: tuple[str, ...] = DEFAULT_MARKERS

    def __post_init__(self):
        if not self.patterns:
            raise ValueError("MarkerRule needs at least one pattern")
        if any("/" in p for p in self.patterns):
            raise ValueError("marker patterns match file names, not paths")

    def matches(self, filename: str) -> bool:
        return any(fnmatch.fnmatchcase(filename, p) for p in self.patterns)


@dataclass(frozen=True)
class Binding:
    node_id: str
    scope: str  # "cgroup" or "pid"
    key: int
    since: float  # birth time of the bound process; -inf for cgroups and unknown births
    task_id: int
    method: Method
    time: float  # when the evidence was observed

    @property
    def ident(self) -> tuple[str, str, int, float]:
        return (self.node_id, self.scope, self.key, self.since)


@dataclass(frozen=True)
class Conflict:
    node_id: str
    scope: str
    key: int
    since: float
    kept_task: int
    kept_method: Method
    rejected_task: int
    rejected_method: Method
    time: float


@dataclass(frozen=True)
class MarkerHit:
    node_id: str
    pid: int
    time: float
    task_id: int
    path: str


@dataclass
class Attribution:
    bindings: dict[tuple, Binding]
    labels: dict[str, list[int | None]]
    conflicts: list[Conflict] = field(default_factory=list)
    unmatched_pods: list[PodMeta] = field(default_factory=list)
    traces: dict[str, NodeTrace] = field(default_factory=dict, repr=False, compare=False)
    graphs: dict[str, ProcessGraph] = field(default_factory=dict, repr=False, compare=False)

    def sorted_bindings(self) -> list[Binding]:
        return [self.bindings[k] for k in sorted(self.bindings)]

    def orphans(self) -> list[tuple[str, int, str]]:
        return [(node, i, UNBOUND)
                for node in sorted(self.labels)
                for i, t in enumerate(self.labels[node]) if t is None]

    def events_by_task(self) -> dict[int, list[tuple[str, int]]]:
        out: dict[int, list[tuple[str, int]]] = defaultdict(list)
        for node in sorted(self.labels):
            for i, t in enumerate(self.labels[node]):
                if t is not None:
                    out[t].append((node, i))
        return dict(out)

    def methods_of(self, task_id: int) -> list[str]:
        return sorted({b.method.value for b in self.bindings.values() if b.task_id == task_id})

    def check(self) -> None:
        """Raise AssertionError if labels are not backed by bindings."""
        bound: dict[str, set[int]] = defaultdict(set)
        for b in self.bindings.values():
            bound[b.node_id].add(b.task_id)
        for node, labels in self.labels.items():
            trace = self.traces.get(node)
            if trace is not None and len(labels) != len(trace.io_events):
                raise AssertionError(f"label count mismatch on node {node}")
            stray = {t for t in labels if t is not None} - bound[node]
            if stray:
                raise AssertionError(f"node {node}: events labelled with unbound tasks {sorted(stray)}")


_NON_ALNUM = re.compile(r"[^A-Za-z0-9]+")


def normalize_task_name(name: str) -> str:
    return _NON_ALNUM.sub("_", name).strip("_")


def build_graphs(traces: Iterable[NodeTrace]) -> dict[str, ProcessGraph]:
    return {t.node_id: build_process_graph(t.fork_events, t.node_id) for t in traces}


def detect_marker_accesses(trace: NodeTrace, tasks: Sequence[TaskRecord],
                           rule: MarkerRule = MarkerRule()) -> list[MarkerHit]:
    by_dir: dict[str, int] = {}
    for t in tasks:
        if not t.work_dir:
            continue
        wd = t.work_dir.rstrip("/")
        if wd in by_dir and by_dir[wd] != t.task_id:
            raise AssociationError(f"tasks {by_dir[wd]} and {t.task_id} share work dir {wd}")
        by_dir[wd] = t.task_id
    hits = []
    name_ok: dict[str, bool] = {}
    for ev in trace.io_events:
        if ev.kind is not Kind.OPEN:
            continue
        d, _, base = ev.path.rpartition("/")
        ok = name_ok.get(base)
        if ok is None:
            ok = name_ok[base] = rule.matches(base)
        if ok and d in by_dir:
            hits.append(MarkerHit(trace.node_id, ev.pid, ev.time_start, by_dir[d], ev.path))
    return hits


class _Binder:
    def __init__(self):
        self.bindings: dict[tuple, Binding] = {}
        self.conflicts: list[Conflict] = []

    def add(self, b: Binding) -> None:
        old = self.bindings.get(b.ident)
        if old is None:
            self.bindings[b.ident] = b
        elif old.task_id != b.task_id:
            keep, drop = (old, b) if _wins(old, b) else (b, old)
            self.bindings[b.ident] = keep
            self.conflicts.append(Conflict(b.node_id, b.scope, b.key, b.since, keep.task_id,
                                           keep.method, drop.task_id, drop.method, b.time))
        elif _wins(b, old):
            self.bindings[b.ident] = b


def _wins(a: Binding, b: Binding) -> bool:
    """True if a takes precedence over b: method rank, then earlier evidence."""
    return (PRECEDENCE[a.method], a.time) <= (PRECEDENCE[b.method], b.time)


def label_events(traces: Iterable[NodeTrace], graphs: dict[str, ProcessGraph],
                 bindings: dict[tuple, Binding]) -> dict[str, list[int | None]]:
    by_cg: dict[str, dict[int, int]] = defaultdict(dict)
    by_proc: dict[str, dict[tuple[int, float], int]] = defaultdict(dict)
    for b in bindings.values():
        if b.scope == "cgroup":
            by_cg[b.node_id][b.key] = b.task_id
        else:
            by_proc[b.node_id][(b.key, b.since)] = b.task_id
    out = {}
    for trace in traces:
        g = graphs.get(trace.node_id) or ProcessGraph(trace.node_id)
        cg_map = by_cg.get(trace.node_id, {})
        proc_map = by_proc.get(trace.node_id, {})
        labels: list[int | None] = []
        append = labels.append
        birth_at = g.birth_at
        # pid -> (birth time, task once born, task before birth) for pids born at most once
        simple: dict[int, tuple[float, int | None, int | None]] = {}

        def resolve(b: Birth | None, pid: int) -> int | None:
            task = None
            if b is not None and b.cgroupid:
                task = cg_map.get(b.cgroupid)
            if task is None and proc_map:
                task = proc_map.get((pid, b.time if b is not None else NEG_INF))
            return task

        for ev in trace.io_events:
            pid = ev.pid
            hit = simple.get(pid)
            if hit is not None:
                append(hit[1] if ev.time_start >= hit[0] else hit[2])
                continue
            bs = g.births.get(pid)
            if bs is not None and len(bs) == 1 and bs[0].parent is not None:
                b = bs[0]
                simple[pid] = (b.time, resolve(b, pid), resolve(None, pid))
                append(simple[pid][1] if ev.time_start >= b.time else simple[pid][2])
                continue
            append(resolve(birth_at(pid, ev.time_start), pid))
        out[trace.node_id] = labels
    return out


def _finish(binder: _Binder, traces: Sequence[NodeTrace], graphs: dict[str, ProcessGraph],
            unmatched: list[PodMeta] | None = None) -> Attribution:
    bindings = {k: binder.bindings[k] for k in sorted(binder.bindings)}
    return Attribution(
        bindings=bindings,
        labels=label_events(traces, graphs, bindings),
        conflicts=binder.conflicts,
        unmatched_pods=unmatched or [],
        traces={t.node_id: t for t in traces},
        graphs=graphs,
    )


def associate_nextflow(traces: Sequence[NodeTrace], graphs: dict[str, ProcessGraph] | None,
                       tasks: Sequence[TaskRecord], rule: MarkerRule = MarkerRule()) -> Attribution:
    if graphs is None:
        graphs = build_graphs(traces)
    binder = _Binder()
    for trace in sorted(traces, key=lambda t: t.node_id):
        g = graphs[trace.node_id]
        for hit in detect_marker_accesses(trace, tasks, rule):
            cg = g.cgroup_of(hit.pid, hit.time)
            if cg:
                binder.add(Binding(trace.node_id, "cgroup", cg, NEG_INF, hit.task_id,
                                   Method.WORKDIR_MARKER, hit.time))
                continue
            # no container: bind the accessing process and everything it forks
            for pid, born in g.subtree(g.key_at(hit.pid, hit.time)):
                binder.add(Binding(trace.node_id, "pid", pid, born, hit.task_id,
                                   Method.PROCESS_SUBTREE, hit.time))
    return _finish(binder, traces, graphs)


def associate_kubernetes(traces: Sequence[NodeTrace], graphs: dict[str, ProcessGraph] | None,
                         tasks: Sequence[TaskRecord], pods: Sequence[PodMeta]) -> Attribution:
    if graphs is None:
        graphs = build_graphs(traces)
    by_name: dict[str, list[int]] = defaultdict(list)
    for t in tasks:
        by_name[normalize_task_name(t.name)].append(t.task_id)
    binder = _Binder()
    unmatched = []
    for pod in sorted(pods, key=lambda p: (p.node_id, p.pod_name)):
        if not pod.is_workflow:
            continue
        ids = by_name.get(normalize_task_name(pod.task_name or ""), [])
        if not ids:
            unmatched.append(pod)
            continue
        if len(ids) > 1:
            raise AssociationError(
                f"pod {pod.pod_name}: taskName {pod.task_name!r} matches tasks {sorted(ids)}")
        g = graphs.get(pod.node_id)
        members = g.members(pod.cgroupid) if g is not None else []
        seen = min((k[1] for k in members), default=NEG_INF)
        binder.add(Binding(pod.node_id, "cgroup", pod.cgroupid, NEG_INF, ids[0],
                           Method.POD_LABEL, seen))
    return _finish(binder, traces, graphs, unmatched)


def merge_attributions(primary: Attribution, secondary: Attribution) -> Attribution:
    """Union of both binding sets; disagreements are reported and settled by
    method precedence (work-dir marker first)."""
    binder = _Binder()
    for b in primary.bindings.values():
        binder.add(b)
    for b in secondary.bindings.values():
        binder.add(b)
    conflicts = []
    for c in primary.conflicts + secondary.conflicts + binder.conflicts:
        if c not in conflicts:
            conflicts.append(c)
    binder.conflicts = conflicts
    unmatched = list(primary.unmatched_pods)
    unmatched += [p for p in secondary.unmatched_pods if p not in unmatched]
    traces = {**secondary.traces, **primary.traces}
    graphs = {**secondary.graphs, **primary.graphs}
    ordered = [traces[k] for k in sorted(traces)]
    return _finish(binder, ordered, graphs, unmatched)
