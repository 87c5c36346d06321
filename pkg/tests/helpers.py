"""Shared fixtures: golden log excerpts and a ground-truth comparison."""
from __future__ import annotations

from pathlib import Path

from wfio.association import associate_kubernetes, associate_nextflow, build_graphs, merge_attributions
from wfio.ingest import RunInputs, load_run
from wfio.simulator import GroundTruth, read_ground_truth

OPEN_LINE = ("1714067937.744, 1714067937.744, 1169224, 27151.124, 27151.124, 27151.124, 27151.124, "
             "5277, O, 0, 35625, 0, 0, 0x00008000, "
             "/home/witzke/nf-rnaseq/outdir/work/52/f11191010952840e07774a95bcd36e/WT_REP2_1_val_1.fq.gz")
READ_LINE = ("1714067937.745, 1714067937.745, 1169224, 27151.124, 27151.124, 27151.124, 27151.124, "
             "5277, R, 512, 35625, 1034, 512, 0x00008000,")
FORK_LINE = "1714067937.409, 1168419, 1169224, 131863"
NEXTFLOW_LINE = (
    "Apr-25 19:59:04.446 [Task monitor] DEBUG n.processor.TaskPollingMonitor - Task completed > "
    "TaskHandler[id: 6; name: NFCORE_RNASEQ:RNASEQ:FASTQ_FASTQC_UMITOOLS_TRIMGALORE:TRIMGALORE (WT_REP2); "
    "status: COMPLETED; exit: 0; error: -; "
    "workDir: /home/witzke/nf-rnaseq/outdir/work/52/f11191010952840e07774a95bcd36e]")
WORK_DIR = "/home/witzke/nf-rnaseq/outdir/work/52/f11191010952840e07774a95bcd36e"
K8S_EVENT_LINE = "27m         Normal   Started pod/nf-002fdc87df831ed4f74f0f2a66482475"
POD_NAME = "nf-002fdc87df831ed4f74f0f2a66482475"
POD_TASK_NAME = "NFCORE_RNASEQ_RNASEQ_FASTQ_FASTQC_UMITOOLS_TRIMGALORE_TRIMGALORE_WT_REP2"
AIRFLOW_LINE = (
    "[2023-12-12T16:18:11.810+0000] {scheduler_job.py:550} INFO - Sending "
    "TaskInstanceKey(dag_id='force', task_id='prepare_level2', "
    "run_id='manual__2023-12-12T16:15:47.103493+00:00', try_number=1, map_index=-1) "
    "to executor with priority 3116 and queue default")


def run_inputs(run_dir: Path, pods: bool = True) -> RunInputs:
    run_dir = Path(run_dir)
    return RunInputs(
        node_dirs=sorted(p for p in (run_dir / "nodes").iterdir() if p.is_dir()),
        nextflow_log=run_dir / "nextflow.log",
        pod_meta=run_dir / "k8s" / "pod_meta.tsv" if pods else None,
        k8s_events=run_dir / "k8s" / "events.txt" if pods else None,
    )


def attribute(run_dir: Path, pods: bool = True):
    run = load_run(run_inputs(run_dir, pods))
    graphs = build_graphs(run.traces)
    attr = associate_nextflow(run.traces, graphs, run.tasks)
    if pods and run.pods:
        attr = merge_attributions(attr, associate_kubernetes(run.traces, graphs, run.tasks, run.pods))
    attr.check()
    return run, attr


def compare_to_truth(attr, gt: GroundTruth) -> dict:
    """Line up surviving ground-truth rows with attribution labels.

    Returns counts of wrong labels, missing labels on task events and labels
    on events that belong to no task.
    """
    out = {"events": 0, "wrong": 0, "missed": 0, "spurious": 0}
    for node, rows in gt.by_node().items():
        kept = [r for r in rows if not r.dropped]
        labels = attr.labels.get(node, [])
        assert len(kept) == len(labels), f"{node}: {len(kept)} truth rows vs {len(labels)} events"
        for r, lab in zip(kept, labels):
            out["events"] += 1
            if lab is None:
                out["missed"] += r.task is not None
            elif r.task is None:
                out["spurious"] += 1
            elif lab != r.task:
                out["wrong"] += 1
    return out


def truth(run_dir: Path) -> GroundTruth:
    return read_ground_truth(run_dir)
