"""Report document and its flat side tables.

The JSON document is the single source; every CSV table is a projection of
it (see ``write_tables``). Key order and list order are fixed so the same
inputs give byte-identical output.
"""
from __future__ import annotations

import csv
import json
import math
from collections import Counter
from pathlib import Path
from typing import Any

from . import __version__
from .analysis import (
    bulkiness_histogram,
    compute_profiles,
    cross_task_lineage,
    loss_report,
)
from .association import (
    MarkerRule,
    associate_kubernetes,
    associate_nextflow,
    build_graphs,
    merge_attributions,
)
from .ingest import LoadedRun, RunInputs, load_run
from .model import Kind, event_identity_check

SCHEMA = "wfio.report/1"
BUCKETS = 10


def _t(x: float | None) -> float | None:
    return None if x is None or math.isinf(x) else x


def _inputs_meta(inputs: RunInputs, rule: MarkerRule | None, raw: bool) -> dict:
    f = inputs.filters
    return {
        "mode": "raw" if raw else "associated",
        "node_dirs": [str(d) for d in inputs.node_dirs],
        "nextflow_log": str(inputs.nextflow_log) if inputs.nextflow_log else None,
        "airflow_log": str(inputs.airflow_log) if inputs.airflow_log else None,
        "pod_meta": str(inputs.pod_meta) if inputs.pod_meta else None,
        "k8s_events": str(inputs.k8s_events) if inputs.k8s_events else None,
        "filters": {
            "dir_prefixes": list(f.dir_prefixes),
            "filesystem": f.filesystem,
            "pids": list(f.pids),
            "pid_subtree": f.pid_subtree,
            "uids": list(f.uids),
            "gids": list(f.gids),
        },
        "markers": list(rule.patterns) if rule else None,
    }


def node_stats(run: LoadedRun) -> list[dict]:
    out = []
    for tr in run.traces:
        evs = tr.io_events
        by_kind = Counter(ev.kind for ev in evs)
        counts = {k.name.lower(): by_kind.get(k, 0) for k in Kind}
        rd = sum(ev.result for ev in evs if ev.kind is Kind.READ)
        wr = sum(ev.result for ev in evs if ev.kind is Kind.WRITE)
        out.append({
            "node_id": tr.node_id,
            "io_events": len(evs),
            "fork_events": len(tr.fork_events),
            "ops": counts,
            "bytes_read": rd,
            "bytes_written": wr,
            "pids": len({ev.pid for ev in evs}),
            "inodes": len({ev.inode_uid for ev in evs}),
            "t_first": min((ev.time_start for ev in evs), default=None),
            "t_last": max((ev.time_end for ev in evs), default=None),
            "identity_violations": len(event_identity_check(tr)),
            "loss_warning": tr.loss_warning,
        })
    return out


def _loss_doc(loss) -> dict:
    return {
        "orphan_events": loss.orphan_events,
        "orphan_handles": loss.orphan_handles,
        "unattributed_events": loss.unattributed_events,
        "nodes": [{
            "node_id": n.node_id,
            "events": n.events,
            "orphan_events": n.orphan_events,
            "orphan_handles": n.orphan_handles,
            "orphan_cause": n.orphan_cause,
            "unattributed_events": n.unattributed_events,
            "loss_warning": n.loss_warning,
        } for n in loss.nodes],
    }


def build_report(inputs: RunInputs, rule: MarkerRule | None = None, raw: bool = False,
                 run: LoadedRun | None = None) -> dict:
    """Run ingest, association and analysis and assemble the report."""
    rule = rule or MarkerRule()
    if run is None:
        run = load_run(inputs)
    doc: dict[str, Any] = {
        "schema": SCHEMA,
        "tool_version": __version__,
        "run": _inputs_meta(inputs, None if raw else rule, raw),
        "nodes": node_stats(run),
    }
    if raw:
        doc["loss"] = _loss_doc(loss_report(run.traces, None))
        return doc

    graphs = build_graphs(run.traces)
    attribution = associate_nextflow(run.traces, graphs, run.tasks, rule)
    if run.pods:
        attribution = merge_attributions(attribution,
                                         associate_kubernetes(run.traces, graphs, run.tasks, run.pods))
    attribution.check()
    profiles = compute_profiles(attribution)
    lineage = cross_task_lineage(attribution, profiles)
    loss = loss_report(run.traces, attribution)

    tasks = []
    for t in sorted(run.tasks, key=lambda t: t.task_id):
        entry: dict[str, Any] = {
            "task_id": t.task_id,
            "name": t.name,
            "status": t.status,
            "exit_code": t.exit_code,
            "work_dir": t.work_dir,
            "source": t.source.value,
            "logged_at": t.logged_at or None,
            "methods": attribution.methods_of(t.task_id),
            "profile": None,
        }
        p = profiles.get(t.task_id)
        if p is not None:
            entry["profile"] = {
                "t0": p.t0,
                "t1": p.t1,
                "runtime": p.runtime,
                "events": p.events,
                "bytes_read": p.bytes_read,
                "bytes_written": p.bytes_written,
                "files": [{
                    "node_id": f.node_id,
                    "inode_uid": f.inode_uid,
                    "path": f.path,
                    "bytes_read": f.bytes_read,
                    "bytes_written": f.bytes_written,
                    "ops": {Kind(k).name.lower(): v for k, v in f.ops.items()},
                    "handles": f.handles,
                    "first_access": f.first_access,
                    "last_access": f.last_access,
                    "span_fraction": f.span_fraction,
                    "timeline": _timeline_doc(p.timelines.get(f.key, [])),
                } for f in p.files],
            }
        tasks.append(entry)

    doc["tasks"] = tasks
    doc["bindings"] = [{
        "node_id": b.node_id,
        "scope": b.scope,
        "key": b.key,
        "since": _t(b.since),
        "task_id": b.task_id,
        "method": b.method.value,
        "time": _t(b.time),
    } for b in attribution.sorted_bindings()]
    doc["conflicts"] = [{
        "node_id": c.node_id,
        "scope": c.scope,
        "key": c.key,
        "since": _t(c.since),
        "kept_task": c.kept_task,
        "kept_method": c.kept_method.value,
        "rejected_task": c.rejected_task,
        "rejected_method": c.rejected_method.value,
        "time": _t(c.time),
    } for c in attribution.conflicts]
    doc["unmatched_pods"] = [{"node_id": p.node_id, "pod_name": p.pod_name, "task_name": p.task_name}
                             for p in attribution.unmatched_pods]
    known = {p.pod_name for p in run.pods}
    doc["missed_pods"] = [name for name in run.started_pods if name not in known]
    doc["lineage"] = [{
        "path": e.path,
        "producer": e.producer,
        "consumer": e.consumer,
        "producer_node": e.producer_node,
        "producer_inode": e.producer_inode,
        "consumer_node": e.consumer_node,
        "consumer_inode": e.consumer_inode,
    } for e in lineage]
    doc["bulkiness"] = {"bucket_count": BUCKETS,
                        "counts": bulkiness_histogram(profiles.values(), BUCKETS)}
    doc["loss"] = _loss_doc(loss)
    return doc


def _timeline_doc(rows) -> dict:
    return {
        "t_rel": [r.t_rel for r in rows],
        "kind": "".join(r.kind for r in rows),
        "offset": [r.offset for r in rows],
        "size": [r.size for r in rows],
    }


def dumps(doc: dict) -> str:
    # compact on purpose: indented output goes through the slow pure-Python encoder
    return json.dumps(doc, separators=(",", ":"), allow_nan=False) + "\n"


def _csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_tables(doc: dict, out_dir: str | Path) -> list[Path]:
    """Flat CSV projections of a report document, for plotting."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    p = out / "nodes.csv"
    _csv(p, ["node_id", "io_events", "fork_events", "open", "read", "write", "close", "delete",
             "bytes_read", "bytes_written", "identity_violations", "loss_warning"],
         ([n["node_id"], n["io_events"], n["fork_events"], *n["ops"].values(),
           n["bytes_read"], n["bytes_written"], n["identity_violations"], int(n["loss_warning"])]
          for n in doc["nodes"]))
    written.append(p)

    p = out / "loss.csv"
    _csv(p, ["node_id", "events", "orphan_events", "orphan_handles", "orphan_cause",
             "unattributed_events", "loss_warning"],
         ([n["node_id"], n["events"], n["orphan_events"], n["orphan_handles"], n["orphan_cause"] or "",
           n["unattributed_events"], int(n["loss_warning"])] for n in doc["loss"]["nodes"]))
    written.append(p)

    if doc["run"]["mode"] == "raw":
        return written

    tasks = doc["tasks"]
    p = out / "tasks.csv"
    _csv(p, ["task_id", "name", "status", "exit_code", "methods", "t0", "t1", "runtime", "events",
             "bytes_read", "bytes_written"],
         ([t["task_id"], t["name"], t["status"], "" if t["exit_code"] is None else t["exit_code"],
           ";".join(t["methods"]),
           *((t["profile"][k] for k in ("t0", "t1", "runtime", "events", "bytes_read", "bytes_written"))
             if t["profile"] else [""] * 6)]
          for t in tasks))
    written.append(p)

    p = out / "files.csv"
    _csv(p, ["task_id", "node_id", "inode_uid", "path", "bytes_read", "bytes_written", "open", "read",
             "write", "close", "delete", "handles", "first_access", "last_access", "span_fraction"],
         ([t["task_id"], f["node_id"], f["inode_uid"], f["path"], f["bytes_read"], f["bytes_written"],
           *f["ops"].values(), f["handles"],
           "" if f["first_access"] is None else f["first_access"],
           "" if f["last_access"] is None else f["last_access"],
           "" if f["span_fraction"] is None else f["span_fraction"]]
          for t in tasks if t["profile"] for f in t["profile"]["files"]))
    written.append(p)

    p = out / "bulkiness_histogram.csv"
    n = doc["bulkiness"]["bucket_count"]
    _csv(p, ["bin", "lo", "hi", "count"],
         ([i, i / n, (i + 1) / n, c] for i, c in enumerate(doc["bulkiness"]["counts"])))
    written.append(p)

    def timeline_rows():
        for t in tasks:
            if not t["profile"]:
                continue
            for f in t["profile"]["files"]:
                tl = f["timeline"]
                for t_rel, kind, off, size in zip(tl["t_rel"], tl["kind"], tl["offset"], tl["size"]):
                    yield (t["task_id"], f["node_id"], f["inode_uid"], f["path"], t_rel, kind, off, size)

    p = out / "timelines.csv"
    _csv(p, ["task_id", "node_id", "inode_uid", "path", "t_rel", "kind", "offset", "size"], timeline_rows())
    written.append(p)

    p = out / "lineage.csv"
    _csv(p, ["path", "producer", "consumer", "producer_node", "producer_inode", "consumer_node",
             "consumer_inode"],
         ([e[k] for k in ("path", "producer", "consumer", "producer_node", "producer_inode",
                          "consumer_node", "consumer_inode")] for e in doc["lineage"]))
    written.append(p)
    return written
