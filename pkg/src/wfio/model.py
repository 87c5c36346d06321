"""In-memory records for I/O traces, fork traces and workflow logs.

All records are frozen. Trace timestamps keep the decimal text they were
read from (``text``) so a parsed line can be written back unchanged; the
text is ignored by equality.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple


class Kind(str, enum.Enum):
    OPEN = "O"
    READ = "R"
    WRITE = "W"
    CLOSE = "C"
    DELETE = "D"

    @property
    def has_path(self) -> bool:
        return self in (Kind.OPEN, Kind.DELETE)


KIND_BY_LETTER = {k.value: k for k in Kind}
HANDLE_KINDS = (Kind.READ, Kind.WRITE, Kind.CLOSE)
DATA_KINDS = (Kind.READ, Kind.WRITE)


@dataclass(frozen=True, slots=True)
class IoEvent:
    time_start: float
    time_end: float
    pid: int
    utime_start: float
    utime_end: float
    stime_start: float
    stime_end: float
    inode_uid: int
    kind: Kind
    result: int
    handle_uid: int
    offset: int
    size: int
    flags: int
    path: str = ""
    # original decimal text of the six time columns, if parsed from disk
    text: tuple[str, ...] | None = field(default=None, compare=False, repr=False)

    def validate(self) -> None:
        if self.time_end < self.time_start:
            raise ValueError(f"time_end < time_start in {self}")
        if self.utime_end < self.utime_start or self.stime_end < self.stime_start:
            raise ValueError(f"cpu time decreases in {self}")
        if self.offset < 0 or self.size < 0:
            raise ValueError(f"negative offset/size in {self}")
        if self.kind.has_path != bool(self.path):
            raise ValueError(f"{self.kind.name} event with path={self.path!r}")


@dataclass(frozen=True, slots=True)
class ForkEvent:
    time: float
    parent_pid: int
    pid: int
    cgroupid: int
    text: str | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class NodeTrace:
    """Events recorded on one host. Pids, cgroupids, handle and inode ids
    are only meaningful inside a single NodeTrace."""

    node_id: str
    io_events: tuple[IoEvent, ...] = ()
    fork_events: tuple[ForkEvent, ...] = ()
    # set when the tracer reported ring-buffer overflow for this node
    loss_warning: bool = False


class Source(str, enum.Enum):
    NEXTFLOW = "Nextflow"
    AIRFLOW = "Airflow"


@dataclass(frozen=True)
class TaskRecord:
    task_id: int
    name: str
    status: str
    exit_code: int | None
    work_dir: str
    source: Source = Source.NEXTFLOW
    # timestamp text of the log line, as written by the workflow manager
    logged_at: str = field(default="", compare=False)


@dataclass(frozen=True)
class PodMeta:
    node_id: str
    pod_name: str
    cgroupid: int
    labels: tuple[tuple[str, str], ...] = ()

    @property
    def label_map(self) -> dict[str, str]:
        return dict(self.labels)

    @property
    def task_name(self) -> str | None:
        return self.label_map.get("taskName")

    @property
    def is_workflow(self) -> bool:
        return self.task_name is not None


class Violation(NamedTuple):
    kind: str  # DuplicateOpen | OrphanHandle | InodePathClash
    line: int  # index into NodeTrace.io_events
    handle_uid: int
    inode_uid: int
    detail: str


def event_identity_check(trace: NodeTrace) -> list[Violation]:
    """Audit the uniqueness rules of handle and inode ids.

    Reports duplicate Opens of a handle, Read/Write/Close on a handle with no
    earlier Open, and an inode id reused for a different path without a
    Delete in between.
    """
    out: list[Violation] = []
    opened: set[int] = set()
    inode_path: dict[int, str] = {}
    for i, ev in enumerate(trace.io_events):
        k = ev.kind
        if k is Kind.OPEN:
            if ev.handle_uid in opened:
                out.append(Violation("DuplicateOpen", i, ev.handle_uid, ev.inode_uid,
                                     f"handle {ev.handle_uid} opened again"))
            opened.add(ev.handle_uid)
            prev = inode_path.get(ev.inode_uid)
            if prev is not None and prev != ev.path:
                out.append(Violation("InodePathClash", i, ev.handle_uid, ev.inode_uid,
                                     f"inode {ev.inode_uid} seen as {prev!r} and {ev.path!r}"))
            inode_path[ev.inode_uid] = ev.path
        elif k is Kind.DELETE:
            prev = inode_path.get(ev.inode_uid)
            if prev is not None and prev != ev.path:
                out.append(Violation("InodePathClash", i, ev.handle_uid, ev.inode_uid,
                                     f"inode {ev.inode_uid} deleted as {ev.path!r}, opened as {prev!r}"))
            inode_path.pop(ev.inode_uid, None)
        elif ev.handle_uid not in opened:
            out.append(Violation("OrphanHandle", i, ev.handle_uid, ev.inode_uid,
                                 f"{k.name} on handle {ev.handle_uid} without Open"))
    return out
