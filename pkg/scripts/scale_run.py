"""Time ingest, association and reporting on a large synthetic run.

    python scripts/scale_run.py --events 1000000 --out results/scale.json
"""
import argparse
import json
import platform
import tempfile
import time
from pathlib import Path

from wfio import __version__
from wfio.association import associate_kubernetes, associate_nextflow, build_graphs, merge_attributions
from wfio.analysis import compute_profiles, cross_task_lineage, loss_report
from wfio.ingest import RunInputs, load_run
from wfio.model import event_identity_check
from wfio.report import build_report, dumps, write_tables
from wfio.simulator import generate_run, scale_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--events", type=int, default=1_000_000)
    ap.add_argument("--nodes", type=int, default=4)
    ap.add_argument("--tasks", type=int, default=64)
    ap.add_argument("--out", type=Path, help="append the timing record to this JSON file")
    ap.add_argument("--keep", type=Path, help="generate into this directory instead of a temp dir")
    args = ap.parse_args()

    tmp = None
    if args.keep:
        run = args.keep
    else:
        tmp = tempfile.TemporaryDirectory()
        run = Path(tmp.name) / "run"
    rec = {"events_requested": args.events, "nodes": args.nodes, "tasks": args.tasks,
           "version": __version__, "python": platform.python_version(), "machine": platform.machine()}

    t = time.perf_counter()
    generate_run(scale_config(args.events, args.nodes, args.tasks), run)
    rec["generate_s"] = time.perf_counter() - t

    inputs = RunInputs(sorted(p for p in (run / "nodes").iterdir()), run / "nextflow.log",
                       pod_meta=run / "k8s" / "pod_meta.tsv", k8s_events=run / "k8s" / "events.txt")
    t0 = time.perf_counter()
    loaded = load_run(inputs)
    t1 = time.perf_counter()
    graphs = build_graphs(loaded.traces)
    attr = associate_nextflow(loaded.traces, graphs, loaded.tasks)
    attr = merge_attributions(attr, associate_kubernetes(loaded.traces, graphs, loaded.tasks, loaded.pods))
    t2 = time.perf_counter()
    profiles = compute_profiles(attr)
    cross_task_lineage(attr, profiles)
    loss_report(loaded.traces, attr)
    t3 = time.perf_counter()
    # the end-to-end number re-runs association inside build_report, as the CLI does
    doc = build_report(inputs, run=loaded)
    text = dumps(doc)
    write_tables(doc, run / "report")
    t4 = time.perf_counter()

    rec.update(
        events=sum(len(tr.io_events) for tr in loaded.traces),
        identity_violations=sum(len(event_identity_check(tr)) for tr in loaded.traces),
        unattributed=sum(t is None for labels in attr.labels.values() for t in labels),
        ingest_s=t1 - t0,
        association_s=t2 - t1,
        analysis_s=t3 - t2,
        report_s=t4 - t3,
        end_to_end_s=(t1 - t0) + (t4 - t3),
        report_bytes=len(text),
    )
    for k, v in rec.items():
        print(f"{k:>20}: {v:.2f}" if isinstance(v, float) else f"{k:>20}: {v}")
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        history = json.loads(args.out.read_text()) if args.out.exists() else []
        history.append(rec)
        args.out.write_text(json.dumps(history, indent=1) + "\n")
    if tmp:
        tmp.cleanup()


if __name__ == "__main__":
    main()
