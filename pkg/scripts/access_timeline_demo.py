"""Producer/consumer access timelines on the two-task fixture.

Simulates tests/fixtures/producer_consumer.yaml, runs the report and prints the
per-file timelines as text bars (t_rel on the x axis, one row per operation).
"""
import argparse
import tempfile
from pathlib import Path

from wfio.ingest import RunInputs
from wfio.report import build_report, write_tables
from wfio.simulator import generate_run, load_config

HERE = Path(__file__).resolve().parent
WIDTH = 60


def bar(t_rel, width=WIDTH):
    pos = min(int(t_rel * width), width - 1)
    return "." * pos + "#" + "." * (width - pos - 1)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=HERE.parent / "tests" / "fixtures" / "producer_consumer.yaml")
    ap.add_argument("--out", type=Path, help="write the report tables here")
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        run = Path(tmp)
        generate_run(load_config(args.config), run)
        inputs = RunInputs(sorted((run / "nodes").iterdir()), run / "nextflow.log",
                           pod_meta=run / "k8s" / "pod_meta.tsv", k8s_events=run / "k8s" / "events.txt")
        doc = build_report(inputs)
    if args.out:
        write_tables(doc, args.out)

    for task in doc["tasks"]:
        prof = task["profile"]
        if not prof:
            continue
        print(f"\n{task['name']}  runtime {prof['runtime']:.2f} s")
        for f in prof["files"]:
            tl = f["timeline"]
            if not tl["t_rel"]:
                continue
            print(f"  {Path(f['path']).name}  span fraction {f['span_fraction']:.3f}")
            for t_rel, kind, off in zip(tl["t_rel"], tl["kind"], tl["offset"]):
                print(f"    {kind} {bar(t_rel)} {t_rel:5.3f} off={off}")
    for e in doc["lineage"]:
        print(f"\nlineage: task {e['producer']} -> task {e['consumer']}  {e['path']}")


if __name__ == "__main__":
    main()
