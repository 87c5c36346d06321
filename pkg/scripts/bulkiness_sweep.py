"""Span-fraction histogram over random simulated workflows.

Mostly a sanity check that the histogram tables look sensible: prints the
bucket counts per seed and the pooled histogram.
"""
import argparse
import tempfile
from pathlib import Path

from wfio.analysis import bulkiness_histogram, compute_profiles
from wfio.association import associate_nextflow, build_graphs
from wfio.ingest import RunInputs, load_run
from wfio.simulator import generate_run, load_config, random_config


def histogram(run: Path, buckets: int) -> list[int]:
    loaded = load_run(RunInputs(sorted((run / "nodes").iterdir()), run / "nextflow.log"))
    attr = associate_nextflow(loaded.traces, build_graphs(loaded.traces), loaded.tasks)
    return bulkiness_histogram(compute_profiles(attr).values(), buckets)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--buckets", type=int, default=10)
    ap.add_argument("--config", type=Path, help="use this workflow instead of random ones")
    args = ap.parse_args()

    pooled = [0] * args.buckets
    configs = [load_config(args.config)] if args.config else [random_config(s) for s in range(args.seeds)]
    for cfg in configs:
        with tempfile.TemporaryDirectory() as tmp:
            generate_run(cfg, tmp)
            counts = histogram(Path(tmp), args.buckets)
        pooled = [a + b for a, b in zip(pooled, counts)]
        print(f"seed {cfg.seed:>4}: {counts}")
    total = sum(pooled) or 1
    print("\npooled")
    for i, c in enumerate(pooled):
        lo, hi = i / args.buckets, (i + 1) / args.buckets
        print(f"  [{lo:.1f}, {hi:.1f}{']' if i == args.buckets - 1 else ')'} {c:6d} {'#' * round(50 * c / total)}")


if __name__ == "__main__":
    main()
