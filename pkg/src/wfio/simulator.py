"""Deterministic generator of synthetic workflow runs with ground truth.

A run directory looks like::

    run/
      nodes/<node>/io_trace.csv      I/O trace, ingest format
      nodes/<node>/fork_trace.csv    fork trace, ingest format
      nodes/<node>/mounts.txt        mount table (work root on "ceph")
      nodes/<node>/owners.csv        pid, uid, gid
      nextflow.log                   one "Task completed" line per task
      k8s/pod_meta.tsv               one row per containerized task
      k8s/events.txt                 "Started pod/<name>" lines
      ground_truth.csv               node, seq, task, pid, cgroupid, dropped

Loss injection additionally writes ``drop_ledger.csv`` and a
``loss_warning.txt`` into every node directory that lost records.

See docs/simconfig.md for the config grammar.
"""
from __future__ import annotations

import csv
import hashlib
import random
from collections import defaultdict
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import yaml

from .association import normalize_task_name
from .ingest import (
    FORK_HEADER,
    FORK_TRACE_NAME,
    IO_HEADER,
    IO_TRACE_NAME,
    LOSS_WARNING_NAME,
    MOUNTS_NAME,
    OWNERS_NAME,
    format_fork_event,
    format_io_event,
    format_pod_meta,
)
from .model import ForkEvent, IoEvent, Kind, PodMeta

O_RDONLY_LARGE = 0x8000
O_WRITE_CREATE = 0x8241  # O_WRONLY | O_CREAT | O_TRUNC | O_LARGEFILE
MARKER_START = ".command.sh"
MARKER_END = ".exitcode"
PATTERNS = ("sequential", "strided", "bulk")
OPS = ("open", "read", "write", "close", "delete")
LOSS_KINDS = ("open", "read", "write", "close", "delete", "fork")
GT_HEADER = ("node", "seq", "task", "pid", "cgroupid", "dropped")
LEDGER_HEADER = ("node", "stream", "seq", "record")


class ConfigError(ValueError):
    pass


# -- config -----------------------------------------------------------------------------

@dataclass
class StepConfig:
    op: str
    file: str
    proc: int = 0
    mode: str = "r"
    size: int = 4096
    count: int = 1
    pattern: str = "sequential"
    stride: int | None = None
    offset: int = 0
    at: float | None = None
    every: float | None = None


@dataclass
class TaskConfig:
    name: str
    node: str
    steps: list[StepConfig] = field(default_factory=list)
    container: bool = True
    procs: int = 0
    chain: bool = False
    after: list[str] = field(default_factory=list)
    start: float | None = None
    end: float | None = None


@dataclass
class LossModel:
    drop: dict[str, float] = field(default_factory=dict)
    seed: int = 0
    # explicit (node, stream, seq) records to remove
    targets: list[tuple[str, str, int]] = field(default_factory=list)

    def __post_init__(self):
        for k, p in self.drop.items():
            if k not in LOSS_KINDS:
                raise ConfigError(f"loss.drop: unknown record kind {k!r}")
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"loss.drop.{k}: probability {p} outside [0, 1]")
        for t in self.targets:
            if len(t) != 3 or t[1] not in ("io", "fork"):
                raise ConfigError(f"loss.targets: bad target {t!r}")

    @property
    def empty(self) -> bool:
        return not self.targets and not any(self.drop.values())


@dataclass
class SimConfig:
    tasks: list[TaskConfig] = field(default_factory=list)
    nodes: list[str] = field(default_factory=lambda: ["node1"])
    seed: int = 0
    clock_base: float = 1714067937.0
    step: float = 0.001
    op_time: float = 0.0
    markers: bool = True
    collide_pids: bool = False
    work_root: str = "/work"
    noise_events: int = 0
    loss: LossModel | None = None

    def validate(self) -> None:
        if not self.step > 0:
            raise ConfigError("step: must be positive")
        if self.op_time < 0:
            raise ConfigError("op_time: must be >= 0")
        if len(set(self.nodes)) != len(self.nodes):
            raise ConfigError("nodes: duplicate node id")
        names = [t.name for t in self.tasks]
        if len(set(names)) != len(names):
            raise ConfigError("tasks: duplicate task name")
        norm = [normalize_task_name(n) for n in names]
        if len(set(norm)) != len(norm):
            raise ConfigError("tasks: two task names normalize to the same pod label")
        for t in self.tasks:
            if t.node not in self.nodes:
                raise ConfigError(f"tasks[{t.name}].node: unknown node {t.node!r}")
            if t.procs < 0:
                raise ConfigError(f"tasks[{t.name}].procs: must be >= 0")
            for a in t.after:
                if a not in names:
                    raise ConfigError(f"tasks[{t.name}].after: unknown task {a!r}")
            for s in t.steps:
                where = f"tasks[{t.name}].steps"
                if s.op not in OPS:
                    raise ConfigError(f"{where}.op: unknown op {s.op!r}")
                if s.pattern not in PATTERNS:
                    raise ConfigError(f"{where}.pattern: unknown pattern {s.pattern!r}")
                if s.mode not in ("r", "w"):
                    raise ConfigError(f"{where}.mode: must be 'r' or 'w'")
                if not 0 <= s.proc <= t.procs:
                    raise ConfigError(f"{where}.proc: {s.proc} not in 0..{t.procs}")
                if s.count < 1 or s.size < 0 or s.offset < 0:
                    raise ConfigError(f"{where}: count must be >= 1, size and offset >= 0")
                if s.file.startswith("@"):
                    ref = s.file[1:].split("/", 1)[0]
                    if ref not in names:
                        raise ConfigError(f"{where}.file: unknown task reference {ref!r}")


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    known = {f.name for f in fields(cls)}
    extra = sorted(set(data) - known)
    if extra:
        raise ConfigError(f"{where}.{extra[0]}: unknown key")
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigError(f"{where}: {e}") from None


def config_from_dict(data: dict) -> SimConfig:
    data = dict(data or {})
    tasks = []
    for i, t in enumerate(data.pop("tasks", None) or []):
        if not isinstance(t, dict):
            raise ConfigError(f"tasks[{i}]: expected a mapping")
        t = dict(t)
        steps = [_build(StepConfig, s, f"tasks[{i}].steps[{j}]") for j, s in enumerate(t.pop("steps", None) or [])]
        for key in ("name", "node"):
            if key not in t:
                raise ConfigError(f"tasks[{i}].{key}: missing")
        tasks.append(_build(TaskConfig, {**t, "steps": steps}, f"tasks[{i}]"))
    loss = data.pop("loss", None)
    if loss is not None:
        loss = dict(loss)
        loss["targets"] = [tuple(x) for x in loss.get("targets", [])]
        loss = _build(LossModel, loss, "loss")
    cfg = _build(SimConfig, {**data, "tasks": tasks, "loss": loss}, "config")
    if cfg.nodes is None or isinstance(cfg.nodes, str):
        raise ConfigError("nodes: expected a list of node ids")
    cfg.nodes = [str(n) for n in cfg.nodes]
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> SimConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"not valid YAML: {e}") from None
    return config_from_dict(data or {})


# -- generation -----------------------------------------------------------------------------

@dataclass
class GroundTruthRow:
    node: str
    seq: int
    task: int | None
    pid: int
    cgroupid: int
    dropped: bool = False


@dataclass
class DropRecord:
    node: str
    stream: str
    seq: int
    record: str


@dataclass
class GroundTruth:
    rows: list[GroundTruthRow]
    ledger: list[DropRecord] = field(default_factory=list)

    def by_node(self) -> dict[str, list[GroundTruthRow]]:
        out: dict[str, list[GroundTruthRow]] = defaultdict(list)
        for r in self.rows:
            out[r.node].append(r)
        return dict(out)


@dataclass
class _Raw:
    """An I/O record before node-wide handle/inode ids are assigned."""
    t: float
    order: tuple
    pid: int
    cg: int
    task: int | None
    kind: Kind
    path: str = ""
    handle: tuple | None = None
    offset: int = 0
    size: int = 0
    flags: int = 0
    cpu: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)


def work_dir_for(cfg: SimConfig, index: int, name: str) -> str:
    h = hashlib.md5(f"{cfg.seed}/{index}/{name}".encode()).hexdigest()
    return f"{cfg.work_root.rstrip('/')}/{h[:2]}/{h[2:32]}"


def pod_name_for(cfg: SimConfig, index: int, name: str) -> str:
    return "nf-" + hashlib.md5(f"pod/{cfg.seed}/{index}/{name}".encode()).hexdigest()


def _schedule(cfg: SimConfig) -> tuple[list[int], list[set[int]]]:
    """Topological order of task indices; ties keep config order."""
    idx = {t.name: i for i, t in enumerate(cfg.tasks)}
    deps: list[set[int]] = []
    for t in cfg.tasks:
        d = {idx[a] for a in t.after}
        d |= {idx[s.file[1:].split("/", 1)[0]] for s in t.steps if s.file.startswith("@")}
        d.discard(idx[t.name])
        deps.append(d)
    done: list[int] = []
    left = list(range(len(cfg.tasks)))
    while left:
        ready = [i for i in left if deps[i] <= set(done)]
        if not ready:
            raise ConfigError(f"tasks: dependency cycle among {[cfg.tasks[i].name for i in left]}")
        done.append(ready[0])
        left.remove(ready[0])
    return done, deps


@dataclass
class SimRun:
    config: SimConfig
    io: dict[str, list[IoEvent]]
    forks: dict[str, list[ForkEvent]]
    gt: dict[str, list[GroundTruthRow]]
    tasks: list[dict]  # id, name, node, work_dir, container, t_start, t_end, pod, cgroupid, pids
    pods: list[PodMeta]
    owners: dict[str, dict[int, tuple[int, int]]]


def simulate(cfg: SimConfig) -> SimRun:
    """Build a run in memory."""
    cfg.validate()
    order, deps = _schedule(cfg)
    node_index = {n: i for i, n in enumerate(cfg.nodes)}
    pid_next = {n: (1000 if cfg.collide_pids else 1000 + 100_000 * i) + 10 for n, i in node_index.items()}
    cg_next = {n: (10_000 if cfg.collide_pids else 10_000 + 10_000 * i) for n, i in node_index.items()}

    def pid_base(node: str) -> int:
        return 1000 if cfg.collide_pids else 1000 + 100_000 * node_index[node]

    raws: dict[str, list[_Raw]] = {n: [] for n in cfg.nodes}
    forks: dict[str, list[tuple[float, tuple, ForkEvent]]] = {n: [] for n in cfg.nodes}
    owners: dict[str, dict[int, tuple[int, int]]] = {n: {} for n in cfg.nodes}
    infos: dict[int, dict] = {}
    end_time: dict[int, float] = {}
    wds = [work_dir_for(cfg, i, t.name) for i, t in enumerate(cfg.tasks)]
    if len(set(wds)) != len(wds):
        raise ConfigError("tasks: work dir hash collision, change seed")

    for i in order:
        t = cfg.tasks[i]
        node = t.node
        task_id = i + 1
        gap = cfg.step if t.start is None else t.start
        T = cfg.clock_base + gap + max((end_time[d] - cfg.clock_base for d in deps[i]), default=0.0)
        cg = 0
        if t.container:
            cg_next[node] += 1
            cg = cg_next[node]
        shim, executor = pid_base(node) + 1, pid_base(node) + 2
        pids = []
        for p in range(t.procs + 1):
            pids.append(pid_next[node])
            pid_next[node] += 1
            if p == 0:
                parent = shim if t.container else executor
            else:
                parent = pids[p - 1] if t.chain else pids[0]
            forks[node].append((T, (T, i, p), ForkEvent(T, parent, pids[p], cg)))
            owners[node][pids[p]] = (1000, 1000)
        cpu = {pid: [0.0, 0.0] for pid in pids}
        cursor = T
        seqno = 0
        open_handles: dict[tuple[int, str], tuple] = {}
        n_opens: dict[tuple[int, str], int] = defaultdict(int)
        last_end = T

        def emit(kind: Kind, proc: int, path: str = "", handle=None, offset=0, size=0, flags=0):
            nonlocal cursor, seqno, last_end
            pid = pids[proc]
            u0, s0 = cpu[pid]
            u1, s1 = u0 + 0.001, s0 + 0.0005
            cpu[pid] = [u1, s1]
            raws[node].append(_Raw(cursor, (cursor, i, seqno), pid, cg, task_id, kind, path, handle,
                                   offset, size, flags, (u0, u1, s0, s1)))
            seqno += 1
            last_end = max(last_end, cursor + cfg.op_time)

        def resolve(file: str) -> str:
            if file.startswith("@"):
                ref, _, rest = file[1:].partition("/")
                j = next(k for k, tt in enumerate(cfg.tasks) if tt.name == ref)
                return f"{wds[j]}/{rest}"
            if file.startswith("/"):
                return file
            return f"{wds[i]}/{file}"

        def open_file(proc: int, path: str, flags: int):
            key = (proc, path)
            if key in open_handles:
                raise ConfigError(f"tasks[{t.name}]: {path} opened twice by proc {proc}")
            n_opens[key] += 1
            h = (node, i, proc, path, n_opens[key])
            open_handles[key] = (h, flags)
            emit(Kind.OPEN, proc, path, h, flags=flags)

        def close_file(proc: int, path: str):
            h, flags = open_handles.pop((proc, path), (None, 0))
            if h is None:
                raise ConfigError(f"tasks[{t.name}]: close of {path} which proc {proc} has not opened")
            emit(Kind.CLOSE, proc, handle=h, flags=flags)

        if cfg.markers:
            open_file(0, f"{wds[i]}/{MARKER_START}", O_RDONLY_LARGE)
            cursor += cfg.step
            close_file(0, f"{wds[i]}/{MARKER_START}")
            cursor += cfg.step

        for s in t.steps:
            if s.at is not None:
                target = T + s.at
                if target < cursor - 1e-12:
                    raise ConfigError(f"tasks[{t.name}].steps.at: {s.at} lies before the previous step")
                cursor = target
            path = resolve(s.file)
            if s.op == "open":
                open_file(s.proc, path, O_WRITE_CREATE if s.mode == "w" else O_RDONLY_LARGE)
                cursor += cfg.step
            elif s.op == "close":
                close_file(s.proc, path)
                cursor += cfg.step
            elif s.op == "delete":
                emit(Kind.DELETE, s.proc, path)
                cursor += cfg.step
            else:
                h_flags = open_handles.get((s.proc, path))
                if h_flags is None:
                    raise ConfigError(f"tasks[{t.name}]: {s.op} of {path} which proc {s.proc} has not opened")
                h, flags = h_flags
                kind = Kind.READ if s.op == "read" else Kind.WRITE
                spacing = 0.0 if s.pattern == "bulk" else (s.every if s.every is not None else cfg.step)
                stride = s.size if s.pattern != "strided" else (s.stride if s.stride is not None else 2 * s.size)
                off = s.offset
                for _ in range(s.count):
                    emit(kind, s.proc, handle=h, offset=off, size=s.size, flags=flags)
                    off += stride
                    cursor += spacing
                if spacing == 0.0:
                    cursor += cfg.step
        if open_handles:
            left = sorted(p for _, p in open_handles)
            raise ConfigError(f"tasks[{t.name}]: files left open: {left}")
        if cfg.markers:
            if t.end is not None:
                if T + t.end - cfg.step < cursor - 1e-12:
                    raise ConfigError(f"tasks[{t.name}].end: {t.end} is shorter than its steps")
                cursor = T + t.end - cfg.step
            open_file(0, f"{wds[i]}/{MARKER_END}", O_WRITE_CREATE)
            cursor += cfg.step
            close_file(0, f"{wds[i]}/{MARKER_END}")
        end_time[i] = last_end
        infos[i] = dict(id=task_id, name=t.name, node=node, work_dir=wds[i], container=t.container,
                        t_start=T, t_end=last_end, cgroupid=cg, pids=pids,
                        pod=pod_name_for(cfg, i, t.name) if t.container else None)

    # unrelated background I/O: an untraced daemon reading one file
    for n in cfg.nodes:
        if cfg.noise_events <= 0:
            continue
        daemon = pid_base(n) + 3
        owners[n][daemon] = (0, 0)
        path = f"/var/log/daemon-{n}.log"
        h = (n, -1, 0, path, 1)
        t = cfg.clock_base
        raws[n].append(_Raw(t, (t, -1, 0), daemon, 0, None, Kind.OPEN, path, h, flags=O_RDONLY_LARGE))
        for k in range(max(cfg.noise_events - 2, 0)):
            t = cfg.clock_base + (k + 1) * cfg.step
            raws[n].append(_Raw(t, (t, -1, k + 1), daemon, 0, None, Kind.READ, "", h, 512 * k, 512,
                                O_RDONLY_LARGE))
        t = cfg.clock_base + cfg.noise_events * cfg.step
        raws[n].append(_Raw(t, (t, -1, cfg.noise_events), daemon, 0, None, Kind.CLOSE, "", h,
                            flags=O_RDONLY_LARGE))

    io: dict[str, list[IoEvent]] = {}
    gt: dict[str, list[GroundTruthRow]] = {}
    for n in cfg.nodes:
        recs = sorted(raws[n], key=lambda r: r.order)
        handle_uid: dict[tuple, tuple[int, int]] = {}
        inode_of: dict[str, int] = {}
        next_h, next_ino = 1, 1
        evs, rows = [], []
        for seq, r in enumerate(recs):
            if r.kind is Kind.OPEN:
                ino = inode_of.get(r.path)
                if ino is None:
                    ino = inode_of[r.path] = next_ino
                    next_ino += 1
                handle_uid[r.handle] = (next_h, ino)
                next_h += 1
                h, ino = handle_uid[r.handle]
                res = 0
            elif r.kind is Kind.DELETE:
                ino = inode_of.pop(r.path, None)
                if ino is None:
                    ino = next_ino
                    next_ino += 1
                h, res = 0, 0
            else:
                h, ino = handle_uid[r.handle]
                res = r.size if r.kind in (Kind.READ, Kind.WRITE) else 0
            u0, u1, s0, s1 = r.cpu
            evs.append(IoEvent(r.t, r.t + cfg.op_time, r.pid, u0, u1, s0, s1, ino, r.kind, res, h,
                               r.offset, r.size, r.flags, r.path if r.kind.has_path else ""))
            rows.append(GroundTruthRow(n, seq, r.task, r.pid, r.cg))
        io[n] = evs
        gt[n] = rows
    fork_out = {n: [f for _, _, f in sorted(forks[n], key=lambda x: x[1])] for n in cfg.nodes}

    task_list = [infos[i] for i in range(len(cfg.tasks))]
    pods = [PodMeta(x["node"], x["pod"], x["cgroupid"],
                    (("app", "nextflow"), ("taskName", normalize_task_name(x["name"]))))
            for x in task_list if x["container"]]
    return SimRun(cfg, io, fork_out, gt, task_list, pods, owners)


def _nextflow_stamp(t: float) -> str:
    d = datetime.fromtimestamp(t, tz=timezone.utc)
    return d.strftime("%b-%d %H:%M:%S.") + f"{d.microsecond // 1000:03d}"


def nextflow_line(t: float, task: dict) -> str:
    return (f"{_nextflow_stamp(t)} [Task monitor] DEBUG n.processor.TaskPollingMonitor - "
            f"Task completed > TaskHandler[id: {task['id']}; name: {task['name']}; status: COMPLETED; "
            f"exit: 0; error: -; workDir: {task['work_dir']}]")


def write_run(run: SimRun, out_dir: str | Path) -> GroundTruth:
    cfg = run.config
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "nodes").mkdir(exist_ok=True)
        (out / "k8s").mkdir(exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create run directory {out}: {e}") from None
    rows: list[GroundTruthRow] = []
    for n in cfg.nodes:
        d = out / "nodes" / n
        d.mkdir(exist_ok=True)
        with open(d / IO_TRACE_NAME, "w") as fh:
            fh.write(IO_HEADER + "\n")
            fh.writelines(format_io_event(ev) + "\n" for ev in run.io[n])
        with open(d / FORK_TRACE_NAME, "w") as fh:
            fh.write(FORK_HEADER + "\n")
            fh.writelines(format_fork_event(f) + "\n" for f in run.forks[n])
        (d / MOUNTS_NAME).write_text(f"rootfs / ext4 rw 0 0\nceph {cfg.work_root} ceph rw 0 0\n")
        with open(d / OWNERS_NAME, "w") as fh:
            fh.write("# pid, uid, gid\n")
            fh.writelines(f"{p}, {u}, {g}\n" for p, (u, g) in sorted(run.owners[n].items()))
        rows += run.gt[n]

    done = sorted(run.tasks, key=lambda x: (x["t_end"], x["id"]))
    with open(out / "nextflow.log", "w") as fh:
        fh.write(f"{_nextflow_stamp(cfg.clock_base)} [main] DEBUG nextflow.cli.Launcher - "
                 "$> nextflow run simulated\n")
        for x in done:
            fh.write(f"{_nextflow_stamp(x['t_start'])} [Task submitter] INFO  nextflow.Session - "
                     f"[{x['work_dir'][-40:-30]}] Submitted process > {x['name']}\n")
        for x in done:
            fh.write(nextflow_line(x["t_end"], x) + "\n")
    with open(out / "k8s" / "pod_meta.tsv", "w") as fh:
        fh.write("# node_id\tpod_name\tcgroupid\tlabels...\n")
        fh.writelines(format_pod_meta(p) + "\n" for p in run.pods)
    with open(out / "k8s" / "events.txt", "w") as fh:
        fh.write("LAST SEEN   TYPE     REASON  OBJECT\n")
        fh.writelines(f"0s          Normal   Started pod/{p.pod_name}\n" for p in run.pods)
    gt = GroundTruth(rows)
    write_ground_truth(gt, out)
    return gt


def write_ground_truth(gt: GroundTruth, run_dir: Path) -> None:
    with open(Path(run_dir) / "ground_truth.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GT_HEADER)
        for r in gt.rows:
            w.writerow((r.node, r.seq, "" if r.task is None else r.task, r.pid, r.cgroupid, int(r.dropped)))


def read_ground_truth(run_dir: str | Path) -> GroundTruth:
    run_dir = Path(run_dir)
    rows = []
    with open(run_dir / "ground_truth.csv", newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(GroundTruthRow(rec["node"], int(rec["seq"]),
                                       int(rec["task"]) if rec["task"] else None,
                                       int(rec["pid"]), int(rec["cgroupid"]), rec["dropped"] == "1"))
    ledger = []
    if (run_dir / "drop_ledger.csv").exists():
        with open(run_dir / "drop_ledger.csv", newline="") as fh:
            for rec in csv.DictReader(fh):
                ledger.append(DropRecord(rec["node"], rec["stream"], int(rec["seq"]), rec["record"]))
    return GroundTruth(rows, ledger)


def generate_run(config: SimConfig, out_dir: str | Path) -> GroundTruth:
    gt = write_run(simulate(config), out_dir)
    if config.loss is not None and not config.loss.empty:
        gt = inject_loss(out_dir, config.loss)
    return gt


# -- loss injection -----------------------------------------------------------------------------

_LETTER_KIND = {"O": "open", "R": "read", "W": "write", "C": "close", "D": "delete"}


def _io_letter(line: str) -> str:
    return line.split(",", 9)[8].strip()


def inject_loss(run_dir: str | Path, model: LossModel, seed: int | None = None) -> GroundTruth:
    """Remove trace records in place, emulating ring-buffer overruns.

    Each data record is dropped with the probability for its kind, plus every
    record named in model.targets. Node directories that lost records get a
    warning file; the ledger of removed records goes to drop_ledger.csv.
    """
    run_dir = Path(run_dir)
    rng = random.Random(model.seed if seed is None else seed)
    targets = set(model.targets)
    gt = read_ground_truth(run_dir)
    gt_index = {(r.node, r.seq): r for r in gt.rows}
    ledger: list[DropRecord] = list(gt.ledger)
    node_dirs = sorted(p for p in (run_dir / "nodes").iterdir() if p.is_dir())
    for d in node_dirs:
        node = d.name
        lost = False
        for stream, name in (("io", IO_TRACE_NAME), ("fork", FORK_TRACE_NAME)):
            path = d / name
            lines = path.read_text().splitlines(keepends=True)
            kept, seq, changed = [], 0, False
            for line in lines:
                s = line.strip()
                if not s or s.startswith("#"):
                    kept.append(line)
                    continue
                kind = "fork" if stream == "fork" else _LETTER_KIND.get(_io_letter(s), "")
                p = model.drop.get(kind, 0.0)
                hit = (node, stream, seq) in targets
                if p > 0 and rng.random() < p:
                    hit = True
                if hit:
                    ledger.append(DropRecord(node, stream, seq, s))
                    if stream == "io" and (node, seq) in gt_index:
                        gt_index[(node, seq)].dropped = True
                    changed = lost = True
                else:
                    kept.append(line)
                seq += 1
            if changed:
                path.write_text("".join(kept))
        if lost:
            (d / LOSS_WARNING_NAME).write_text("Possibly lost samples: ring buffer overflow\n")
    new_drops = len(ledger) > len(gt.ledger)
    gt = GroundTruth(gt.rows, ledger)
    if new_drops:
        write_ground_truth(gt, run_dir)
        with open(run_dir / "drop_ledger.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LEDGER_HEADER)
            for r in ledger:
                w.writerow((r.node, r.stream, r.seq, r.record))
    return gt


# -- random configs for property suites --------------------------------------------------------

def random_config(seed: int, n_nodes: int | None = None, n_tasks: int | None = None,
                  container: bool | None = None, collide_pids: bool = False) -> SimConfig:
    """A random but valid workflow: a DAG whose tasks read their parents'
    outputs, read shared reference files and write new outputs."""
    rng = random.Random(seed)
    n_nodes = n_nodes or rng.randint(1, 4)
    n_tasks = n_tasks or rng.randint(2, 20)
    nodes = [f"node{k + 1}" for k in range(n_nodes)]
    tasks: list[TaskConfig] = []
    outputs: dict[str, list[str]] = {}
    refs = [f"/work/ref/genome_{k}.fa" for k in range(3)]
    for k in range(n_tasks):
        name = f"WF:STEP_{k % 5}:PROC_{k} (sample_{k})"
        procs = rng.randint(0, 3)
        steps: list[StepConfig] = []

        def rw(op, file, proc):
            mode = "w" if op == "write" else "r"
            pattern = rng.choice(PATTERNS)
            steps.append(StepConfig("open", file, proc, mode=mode))
            steps.append(StepConfig(op, file, proc, size=rng.choice((512, 4096, 65536)),
                                    count=rng.randint(1, 12), pattern=pattern))
            steps.append(StepConfig("close", file, proc))

        parents = rng.sample(tasks, k=min(len(tasks), rng.randint(0, 2))) if tasks else []
        for p in parents:
            for f in outputs[p.name]:
                rw("read", f"@{p.name}/{f}", rng.randint(0, procs))
        if rng.random() < 0.5:
            rw("read", rng.choice(refs), rng.randint(0, procs))
        outs = [f"out_{j}.dat" for j in range(rng.randint(1, 2))]
        for f in outs:
            rw("write", f, rng.randint(0, procs))
        if rng.random() < 0.3:
            rw("write", "scratch.tmp", rng.randint(0, procs))
            steps.append(StepConfig("delete", "scratch.tmp", rng.randint(0, procs)))
        outputs[name] = outs
        tasks.append(TaskConfig(
            name=name, node=rng.choice(nodes), steps=steps,
            container=rng.random() < 0.5 if container is None else container,
            procs=procs, chain=rng.random() < 0.3,
            start=round(rng.uniform(0.0, 0.05), 3),
        ))
    return SimConfig(tasks=tasks, nodes=nodes, seed=seed, collide_pids=collide_pids)


def scale_config(events: int, n_nodes: int = 4, n_tasks: int = 64, seed: int = 0) -> SimConfig:
    """A wide two-level workflow with roughly ``events`` I/O records.

    Half the tasks write an output in many chunks; the other half read one
    producer's output plus a shared reference file.
    """
    nodes = [f"node{k + 1}" for k in range(n_nodes)]
    half = max(1, n_tasks // 2)
    # fixed records: 4 marker records per task, one open/close pair per file
    overhead = half * 6 + (n_tasks - half) * 8
    chunks = max(1, -(-(events - overhead) // n_tasks))
    tasks = []
    for k in range(n_tasks):
        if k < half:
            name = f"SCALE:PRODUCE (part_{k})"
            steps = [StepConfig("open", "chunk.bin", mode="w"),
                     StepConfig("write", "chunk.bin", size=65536, count=chunks, every=1e-6),
                     StepConfig("close", "chunk.bin")]
            after = []
        else:
            src = f"SCALE:PRODUCE (part_{k - half})"
            ref = "/work/ref/genome.fa"
            n_ref = chunks // 4
            steps = [StepConfig("open", ref, proc=1),
                     StepConfig("read", ref, proc=1, size=4096, count=max(1, n_ref), pattern="strided",
                                every=1e-6),
                     StepConfig("close", ref, proc=1),
                     StepConfig("open", f"@{src}/chunk.bin"),
                     StepConfig("read", f"@{src}/chunk.bin", size=65536, count=max(1, chunks - n_ref),
                                every=1e-6),
                     StepConfig("close", f"@{src}/chunk.bin")]
            after = [src]
            name = f"SCALE:CONSUME (part_{k - half})"
        tasks.append(TaskConfig(name, nodes[k % n_nodes], steps, container=k % 3 != 0, procs=1,
                                after=after))
    return SimConfig(tasks=tasks, nodes=nodes, seed=seed)


def config_to_dict(cfg: SimConfig) -> dict:
    """Plain-data form of a config, suitable for yaml.safe_dump."""
    def clean(obj):
        if hasattr(obj, "__dataclass_fields__"):
            return {f.name: clean(getattr(obj, f.name)) for f in fields(obj)
                    if getattr(obj, f.name) is not None}
        if isinstance(obj, (list, tuple)):
            return [clean(x) for x in obj]
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in obj.items()}
        return obj
    return clean(cfg)
