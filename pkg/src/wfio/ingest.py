"""Parsers and writers for the on-disk trace and log formats, plus the
run-directory loader.

I/O trace line (15 columns, ", "-separated, '#' starts a comment)::

    time_start, time_end, pid, utime_start, utime_end, stime_start, stime_end,
    inode, type, result, handle, offset, size, flags, path

Fork trace line: ``time, parent_pid, pid, cgroupid``.
"""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, TextIO

from .model import (
    KIND_BY_LETTER,
    ForkEvent,
    IoEvent,
    Kind,
    NodeTrace,
    PodMeta,
    Source,
    TaskRecord,
)

log = logging.getLogger(__name__)

IO_COLUMNS = (
    "time_start", "time_end", "pid", "utime_start", "utime_end", "stime_start",
    "stime_end", "inode", "type", "result", "handle", "offset", "size", "flags", "path",
)
IO_HEADER = (
    "# I/O trace with: time_start, time_end, pid, utime_start,utime_end,"
    "stime_start,stime_end,inode,type,result,handle,offset,size,flags,path"
)
FORK_HEADER = "# PID tracing log with:\n# time, parent pid, pid, cgroupid"

IO_TRACE_NAME = "io_trace.csv"
FORK_TRACE_NAME = "fork_trace.csv"
MOUNTS_NAME = "mounts.txt"
OWNERS_NAME = "owners.csv"
LOSS_WARNING_NAME = "loss_warning.txt"


class TraceParseError(ValueError):
    def __init__(self, msg: str, lineno: int = 0, field: str | None = None, source: str | None = None):
        super().__init__(msg)
        self.msg = msg
        self.lineno = lineno
        self.field = field
        self.source = source

    def __str__(self) -> str:
        where = f"{self.source}:" if self.source else "line "
        loc = f"{where}{self.lineno}" + (f" [{self.field}]" if self.field else "")
        return f"{loc}: {self.msg}"


# -- number formatting --------------------------------------------------------

def fmt_decimal(x: float) -> str:
    """Shortest decimal text that reads back as x, with at least three
    fraction digits and no exponent."""
    if not math.isfinite(x):
        raise ValueError(f"not a finite time value: {x!r}")
    r = repr(x)
    whole, dot, frac = r.partition(".")
    if "e" in r:
        # exponent form; spell the digits out
        r = f"{x:.20f}".rstrip("0")
        while float(r) != x:
            r = f"{x:.{len(r)}f}"
        whole, dot, frac = r.partition(".")
    if len(frac) >= 3:
        return f"{whole}.{frac}"
    return f"{whole}.{frac:0<3}"


def _int(s: str) -> int:
    return int(s) if s else 0


def _float(s: str) -> float:
    return float(s) if s else 0.0


def _hex(s: str) -> int:
    return int(s, 16) if s else 0


# -- I/O trace ------------------------------------------------------------------

_IO_CONVERTERS = (
    _float, _float, _int, _float, _float, _float, _float, _int,
    None, _int, _int, _int, _int, _hex, None,
)


def _locate_bad_field(parts: list[str], lineno: int) -> TraceParseError:
    for name, conv, raw in zip(IO_COLUMNS, _IO_CONVERTERS, parts):
        if name == "type":
            if raw not in KIND_BY_LETTER:
                return TraceParseError(f"unknown event type {raw!r}", lineno, name)
        elif conv is not None:
            try:
                conv(raw)
            except ValueError:
                return TraceParseError(f"not a number: {raw!r}", lineno, name)
    return TraceParseError("malformed line", lineno)


# six time columns that are already in canonical form: repr text, >= 3 decimals
_PLAIN_TIMES = re.compile(r"(?:-?\d+\.\d{3,},){5}-?\d+\.\d{3,}\Z")


def parse_io_trace_line(line: str, lineno: int = 0) -> IoEvent | None:
    """Parse one trace line. Returns None for comment and blank lines."""
    s = line.strip()
    if not s or s[0] == "#":
        return None
    parts = [p.strip() for p in s.split(",", 14)]
    if len(parts) != 15:
        raise TraceParseError(f"expected 15 fields, got {len(parts)}", lineno)
    ts, te, pid, us, ue, ss, se, ino, kind, res, h, off, size, flags, path = parts
    raw = (ts, te, us, ue, ss, se)
    try:
        try:
            times = tuple(map(float, raw))
            ints = (int(pid), int(ino), int(res), int(h), int(off), int(size), int(flags, 16))
        except ValueError:
            # empty columns are allowed and read as 0
            times = tuple(map(_float, raw))
            ints = (_int(pid), _int(ino), _int(res), _int(h), _int(off), _int(size), _hex(flags))
        k = KIND_BY_LETTER[kind]
    except (ValueError, KeyError):
        raise _locate_bad_field(parts, lineno) from None
    if not all(map(math.isfinite, times)):
        raise TraceParseError("time columns must be finite numbers", lineno, _first_bad_time(raw))
    text = None
    if tuple(map(repr, times)) != raw or not _PLAIN_TIMES.match(",".join(raw)):
        if any(r != fmt_decimal(x) for x, r in zip(times, raw)):
            text = raw
    return IoEvent(
        times[0], times[1], ints[0], times[2], times[3], times[4], times[5],
        ints[1], k, ints[2], ints[3], ints[4], ints[5], ints[6], path, text,
    )


def _first_bad_time(raw: tuple[str, ...]) -> str:
    names = ("time_start", "time_end", "utime_start", "utime_end", "stime_start", "stime_end")
    return next(n for n, r in zip(names, raw) if not math.isfinite(_float(r)))


def format_io_event(ev: IoEvent) -> str:
    if ev.text is not None:
        ts, te, us, ue, ss, se = ev.text
    else:
        ts, te, us, ue, ss, se = map(fmt_decimal, (
            ev.time_start, ev.time_end, ev.utime_start, ev.utime_end, ev.stime_start, ev.stime_end))
    head = ", ".join((
        ts, te, str(ev.pid), us, ue, ss, se, str(ev.inode_uid), ev.kind.value,
        str(ev.result), str(ev.handle_uid), str(ev.offset), str(ev.size), f"0x{ev.flags:08x}",
    ))
    # an empty path leaves a bare trailing comma
    return f"{head}, {ev.path}" if ev.path else head + ","


def iter_io_trace(stream: Iterable[str], source: str | None = None) -> Iterator[IoEvent]:
    for lineno, line in enumerate(stream, 1):
        try:
            ev = parse_io_trace_line(line, lineno)
        except TraceParseError as e:
            e.source = source
            raise
        if ev is not None:
            yield ev


def parse_io_trace(stream: Iterable[str], source: str | None = None) -> list[IoEvent]:
    """Parse a whole trace, stably sorted by time_start."""
    events = list(iter_io_trace(stream, source))
    if any(events[i].time_start > events[i + 1].time_start for i in range(len(events) - 1)):
        events.sort(key=lambda e: e.time_start)
    return events


def write_io_trace(events: Iterable[IoEvent], fh: TextIO, header: bool = True) -> None:
    if header:
        fh.write(IO_HEADER + "\n")
    fh.writelines(format_io_event(ev) + "\n" for ev in events)


# -- fork trace -------------------------------------------------------------------

def parse_fork_line(line: str, lineno: int = 0) -> ForkEvent | None:
    s = line.strip()
    if not s or s[0] == "#":
        return None
    parts = [p.strip() for p in s.split(",")]
    if len(parts) != 4:
        raise TraceParseError(f"expected 4 fields, got {len(parts)}", lineno)
    names = ("time", "parent_pid", "pid", "cgroupid")
    vals: list = []
    for name, raw in zip(names, parts):
        try:
            vals.append(float(raw) if name == "time" else int(raw))
            if name == "time" and not math.isfinite(vals[0]):
                raise ValueError
        except ValueError:
            raise TraceParseError(f"not a number: {raw!r}", lineno, name) from None
    if vals[0] <= 0:
        raise TraceParseError("time must be positive", lineno, "time")
    text = None if fmt_decimal(vals[0]) == parts[0] else parts[0]
    return ForkEvent(vals[0], vals[1], vals[2], vals[3], text)


def format_fork_event(ev: ForkEvent) -> str:
    t = ev.text if ev.text is not None else fmt_decimal(ev.time)
    return f"{t}, {ev.parent_pid}, {ev.pid}, {ev.cgroupid}"


def parse_fork_trace(stream: Iterable[str], source: str | None = None) -> list[ForkEvent]:
    out = []
    for lineno, line in enumerate(stream, 1):
        try:
            ev = parse_fork_line(line, lineno)
        except TraceParseError as e:
            e.source = source
            raise
        if ev is not None:
            out.append(ev)
    out.sort(key=lambda e: e.time)
    return out


def write_fork_trace(events: Iterable[ForkEvent], fh: TextIO, header: bool = True) -> None:
    if header:
        fh.write(FORK_HEADER + "\n")
    fh.writelines(format_fork_event(ev) + "\n" for ev in events)


# -- workflow manager logs ------------------------------------------------------------

NEXTFLOW_MARKER = "Task completed > TaskHandler["
_KV = re.compile(r"\s*([A-Za-z_]+):\s?(.*)")
_NF_STAMP = re.compile(r"^\s*([A-Z][a-z]{2}-\d{2} \d{2}:\d{2}:\d{2}\.\d{3})")
_AF_STAMP = re.compile(r"^\s*\[([^\]]+)\]")


def parse_nextflow_line(line: str, lineno: int = 0) -> TaskRecord | None:
    i = line.find(NEXTFLOW_MARKER)
    if i < 0:
        return None
    body = line[i + len(NEXTFLOW_MARKER):].rstrip()
    if body.endswith("]"):
        body = body[:-1]
    kv = {}
    for chunk in body.split(";"):
        m = _KV.match(chunk)
        if m:
            kv[m.group(1)] = m.group(2).strip()
    for key in ("id", "name", "status", "exit", "workDir"):
        if key not in kv:
            raise TraceParseError(f"task line lacks key {key!r}", lineno, key)
    try:
        task_id = int(kv["id"])
    except ValueError:
        raise TraceParseError(f"bad task id {kv['id']!r}", lineno, "id") from None
    exit_raw = kv["exit"]
    try:
        exit_code = None if exit_raw in ("-", "") else int(exit_raw)
    except ValueError:
        raise TraceParseError(f"bad exit code {exit_raw!r}", lineno, "exit") from None
    if not kv["workDir"]:
        raise TraceParseError("empty workDir", lineno, "workDir")
    m = _NF_STAMP.match(line)
    return TaskRecord(task_id, kv["name"], kv["status"], exit_code, kv["workDir"], Source.NEXTFLOW,
                      m.group(1) if m else "")


def parse_nextflow_log(stream: Iterable[str], source: str | None = None) -> list[TaskRecord]:
    out = []
    for lineno, line in enumerate(stream, 1):
        try:
            rec = parse_nextflow_line(line, lineno)
        except TraceParseError as e:
            e.source = source
            raise
        if rec is not None:
            out.append(rec)
    return out


AIRFLOW_MARKER = "Sending TaskInstanceKey("
_AIRFLOW_KEY = re.compile(r"(\w+)=('(?:[^'\\]|\\.)*'|[^,()]+)")


def parse_airflow_log(stream: Iterable[str], source: str | None = None) -> list[TaskRecord]:
    """Scheduler "Sending TaskInstanceKey(...)" lines as task records.

    Airflow has no integer task id; records are numbered 1.. in log order.
    """
    out = []
    for lineno, line in enumerate(stream, 1):
        i = line.find(AIRFLOW_MARKER)
        if i < 0:
            continue
        start = i + len(AIRFLOW_MARKER)
        end = line.find(")", start)
        if end < 0:
            raise TraceParseError("unterminated TaskInstanceKey", lineno, source=source)
        kv = {k: v.strip().strip("'") for k, v in _AIRFLOW_KEY.findall(line[start:end])}
        for key in ("dag_id", "task_id"):
            if not kv.get(key):
                raise TraceParseError(f"TaskInstanceKey lacks {key!r}", lineno, key, source)
        m = _AF_STAMP.match(line)
        out.append(TaskRecord(len(out) + 1, f"{kv['dag_id']}.{kv['task_id']}",
                              "QUEUED", None, "", Source.AIRFLOW, m.group(1) if m else ""))
    return out


# -- Kubernetes side files ------------------------------------------------------------

def parse_pod_meta(stream: Iterable[str], source: str | None = None) -> list[PodMeta]:
    """Tab-separated: node_id, pod_name, cgroupid, then key=value labels."""
    out = []
    seen = set()
    for lineno, line in enumerate(stream, 1):
        s = line.rstrip("\n")
        if not s.strip() or s.lstrip().startswith("#"):
            continue
        cols = s.split("\t")
        if len(cols) < 3 or not cols[0].strip():
            raise TraceParseError("need node_id, pod_name and cgroupid columns", lineno, "node_id", source)
        node, pod, cg = (c.strip() for c in cols[:3])
        try:
            cgroupid = int(cg)
        except ValueError:
            raise TraceParseError(f"bad cgroupid {cg!r}", lineno, "cgroupid", source) from None
        if cgroupid <= 0:
            raise TraceParseError("cgroupid must be positive", lineno, "cgroupid", source)
        labels = []
        for c in cols[3:]:
            if not c.strip():
                continue
            k, eq, v = c.partition("=")
            if not eq:
                raise TraceParseError(f"label {c!r} is not key=value", lineno, "labels", source)
            labels.append((k.strip(), v.strip()))
        if (node, pod) in seen:
            raise TraceParseError(f"duplicate pod {pod} on node {node}", lineno, "pod_name", source)
        seen.add((node, pod))
        out.append(PodMeta(node, pod, cgroupid, tuple(labels)))
    return out


def format_pod_meta(meta: PodMeta) -> str:
    return "\t".join([meta.node_id, meta.pod_name, str(meta.cgroupid)] + [f"{k}={v}" for k, v in meta.labels])


_STARTED = re.compile(r"\bStarted\s+pod/(\S+)")


def parse_k8s_events(stream: Iterable[str]) -> list[str]:
    """Names of pods with a "Started pod/<name>" event, in order of first sight."""
    seen: dict[str, None] = {}
    for line in stream:
        m = _STARTED.search(line)
        if m:
            seen.setdefault(m.group(1))
    return list(seen)


# -- per-node side files ----------------------------------------------------------------

def parse_mounts(stream: Iterable[str]) -> list[tuple[str, str]]:
    """/proc/mounts style lines -> (mount point, fstype), longest first."""
    out = []
    for line in stream:
        cols = line.split()
        if len(cols) >= 3 and not cols[0].startswith("#"):
            out.append((cols[1], cols[2]))
    out.sort(key=lambda m: len(m[0]), reverse=True)
    return out


def parse_owners(stream: Iterable[str]) -> dict[int, tuple[int, int]]:
    """``pid, uid, gid`` rows -> {pid: (uid, gid)}."""
    out = {}
    for lineno, line in enumerate(stream, 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        try:
            pid, uid, gid = (int(c) for c in s.split(","))
        except ValueError:
            raise TraceParseError("expected pid, uid, gid", lineno) from None
        out[pid] = (uid, gid)
    return out


# -- run loading ------------------------------------------------------------------------

@dataclass
class Filters:
    dir_prefixes: tuple[str, ...] = ()
    filesystem: str | None = None
    pids: tuple[int, ...] = ()
    pid_subtree: bool = False
    uids: tuple[int, ...] = ()
    gids: tuple[int, ...] = ()

    @property
    def active(self) -> bool:
        return bool(self.dir_prefixes or self.filesystem or self.pids or self.uids or self.gids)


@dataclass
class RunInputs:
    node_dirs: list[Path]
    nextflow_log: Path | None = None
    airflow_log: Path | None = None
    pod_meta: Path | None = None
    k8s_events: Path | None = None
    filters: Filters = field(default_factory=Filters)


@dataclass
class LoadedRun:
    traces: list[NodeTrace]
    tasks: list[TaskRecord]
    pods: list[PodMeta]
    started_pods: list[str]


def under_prefix(path: str, prefix: str) -> bool:
    p = prefix.rstrip("/")
    return path == p or path.startswith(p + "/") or not p


def _fs_of(path: str, mounts: list[tuple[str, str]]) -> str | None:
    for mp, fstype in mounts:
        if under_prefix(path, mp):
            return fstype
    return None


def _descendant_pids(forks: list[ForkEvent], roots: Iterable[int]) -> set[int]:
    children: dict[int, list[int]] = {}
    for f in forks:
        children.setdefault(f.parent_pid, []).append(f.pid)
    keep = set(roots)
    stack = list(keep)
    while stack:
        for c in children.get(stack.pop(), ()):
            if c not in keep:
                keep.add(c)
                stack.append(c)
    return keep


def apply_filters(events: list[IoEvent], forks: list[ForkEvent], filters: Filters,
                  mounts: list[tuple[str, str]] | None = None,
                  owners: dict[int, tuple[int, int]] | None = None) -> list[IoEvent]:
    """Ingest-side filtering.

    Path-based filters decide on Open (and Delete) events; every later event
    of a rejected handle is dropped with it. Events on handles whose Open was
    never seen carry no path and are kept.
    """
    if not filters.active:
        return events
    if filters.filesystem and mounts is None:
        raise ValueError("filesystem filter needs a mounts table for the node")
    if (filters.uids or filters.gids) and owners is None:
        raise ValueError("user/group filter needs an owners table for the node")

    pid_ok: set[int] | None = None
    if filters.pids:
        pid_ok = _descendant_pids(forks, filters.pids) if filters.pid_subtree else set(filters.pids)

    def path_ok(path: str) -> bool:
        if filters.dir_prefixes and not any(under_prefix(path, p) for p in filters.dir_prefixes):
            return False
        if filters.filesystem and _fs_of(path, mounts or []) != filters.filesystem:
            return False
        return True

    def proc_ok(pid: int) -> bool:
        if pid_ok is not None and pid not in pid_ok:
            return False
        if filters.uids or filters.gids:
            owner = owners.get(pid) if owners else None
            if owner is None:
                return False
            if filters.uids and owner[0] not in filters.uids:
                return False
            if filters.gids and owner[1] not in filters.gids:
                return False
        return True

    dropped_handles: set[int] = set()
    out = []
    for ev in events:
        k = ev.kind
        if k is Kind.OPEN:
            if not path_ok(ev.path):
                dropped_handles.add(ev.handle_uid)
                continue
        elif k is Kind.DELETE:
            if not path_ok(ev.path):
                continue
        elif ev.handle_uid in dropped_handles:
            continue
        if proc_ok(ev.pid):
            out.append(ev)
    return out


def find_trace_files(node_dir: Path) -> tuple[Path | None, Path | None]:
    """Locate the I/O and fork traces of a node directory.

    The fixed names win; otherwise any *.csv is classified by the column
    count of its first data line (15 = I/O trace, 4 = fork trace).
    """
    io = node_dir / IO_TRACE_NAME
    fork = node_dir / FORK_TRACE_NAME
    io_p = io if io.is_file() else None
    fork_p = fork if fork.is_file() else None
    if io_p and fork_p:
        return io_p, fork_p
    for p in sorted(node_dir.glob("*.csv")):
        if p in (io_p, fork_p) or p.name == OWNERS_NAME:
            continue
        with p.open() as fh:
            for line in fh:
                s = line.strip()
                if s and not s.startswith("#"):
                    n = len(s.split(",", 14))
                    if n == 15 and io_p is None:
                        io_p = p
                    elif n == 4 and fork_p is None:
                        fork_p = p
                    break
    return io_p, fork_p


def load_node(node_dir: Path, filters: Filters | None = None) -> NodeTrace:
    node_dir = Path(node_dir)
    if not node_dir.is_dir():
        raise FileNotFoundError(f"node directory not readable: {node_dir}")
    io_p, fork_p = find_trace_files(node_dir)
    if io_p is None:
        raise FileNotFoundError(f"no I/O trace in {node_dir}")
    with io_p.open() as fh:
        events = parse_io_trace(fh, str(io_p))
    forks: list[ForkEvent] = []
    if fork_p is not None:
        with fork_p.open() as fh:
            forks = parse_fork_trace(fh, str(fork_p))
    else:
        log.warning("no fork trace in %s", node_dir)
    if filters is not None and filters.active:
        mounts = owners = None
        if (node_dir / MOUNTS_NAME).is_file():
            with (node_dir / MOUNTS_NAME).open() as fh:
                mounts = parse_mounts(fh)
        if (node_dir / OWNERS_NAME).is_file():
            with (node_dir / OWNERS_NAME).open() as fh:
                owners = parse_owners(fh)
        events = apply_filters(events, forks, filters, mounts, owners)
    return NodeTrace(node_dir.name, tuple(events), tuple(forks),
                     loss_warning=(node_dir / LOSS_WARNING_NAME).exists())


def load_run(inputs: RunInputs) -> LoadedRun:
    if not inputs.node_dirs:
        raise ValueError("at least one node directory is required")
    names = [Path(d).name for d in inputs.node_dirs]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise ValueError(f"duplicate node id(s): {', '.join(dupes)}")
    traces = [load_node(Path(d), inputs.filters) for d in inputs.node_dirs]
    traces.sort(key=lambda t: t.node_id)

    tasks: list[TaskRecord] = []
    if inputs.nextflow_log is not None:
        with open(inputs.nextflow_log) as fh:
            tasks += parse_nextflow_log(fh, str(inputs.nextflow_log))
    if inputs.airflow_log is not None:
        with open(inputs.airflow_log) as fh:
            tasks += parse_airflow_log(fh, str(inputs.airflow_log))
    ids = [t.task_id for t in tasks]
    if len(set(ids)) != len(ids):
        raise ValueError("task ids are not unique across the supplied logs")

    pods: list[PodMeta] = []
    if inputs.pod_meta is not None:
        with open(inputs.pod_meta) as fh:
            pods = parse_pod_meta(fh, str(inputs.pod_meta))
    started: list[str] = []
    if inputs.k8s_events is not None:
        with open(inputs.k8s_events) as fh:
            started = parse_k8s_events(fh)
    return LoadedRun(traces, tasks, pods, started)
