"""Command line: ``wfio {simulate,check,associate,report}``.

Exit codes: 0 success, 1 input error, 2 internal invariant violation.
Diagnostics go to stderr; data goes to files or stdout.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .association import (
    AssociationError,
    MarkerRule,
    associate_kubernetes,
    associate_nextflow,
    build_graphs,
    merge_attributions,
)
from .ingest import Filters, RunInputs, TraceParseError, load_node, load_run
from .model import event_identity_check
from .report import build_report, dumps, write_tables
from .simulator import LOSS_KINDS, ConfigError, LossModel, generate_run, load_config

log = logging.getLogger("wfio")

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2


def _err(msg: str) -> None:
    print(f"wfio: {msg}", file=sys.stderr)


# -- shared input flags -------------------------------------------------------------------

def _add_input_flags(p: argparse.ArgumentParser, with_logs: bool = True) -> None:
    p.add_argument("--trace-dir", action="append", default=[], type=Path,
                   help="node log directory (repeat once per node)")
    p.add_argument("--run-dir", type=Path,
                   help="simulator-style run directory: nodes/*, nextflow.log, k8s/*")
    if not with_logs:
        return
    p.add_argument("--nextflow-log", type=Path)
    p.add_argument("--airflow-log", type=Path)
    p.add_argument("--pod-meta", type=Path)
    p.add_argument("--k8s-events", type=Path)
    p.add_argument("--dir-prefix", action="append", default=[],
                   help="keep only files under this directory (repeatable)")
    p.add_argument("--filesystem", help="keep only files on this fstype (needs mounts.txt per node)")
    p.add_argument("--pids", help="comma-separated pids to keep")
    p.add_argument("--pid-subtree", action="store_true", help="also keep fork descendants of --pids")
    p.add_argument("--uids", help="comma-separated uids to keep (needs owners.csv per node)")
    p.add_argument("--gids", help="comma-separated gids to keep (needs owners.csv per node)")
    p.add_argument("--markers", help="comma-separated marker file name patterns")


def _ints(s: str | None) -> tuple[int, ...]:
    if not s:
        return ()
    try:
        return tuple(int(x) for x in s.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of integers: {s!r}") from None


def _node_dirs(args) -> list[Path]:
    dirs = list(args.trace_dir)
    if args.run_dir is not None:
        nodes = args.run_dir / "nodes"
        if not nodes.is_dir():
            raise FileNotFoundError(f"{args.run_dir} has no nodes/ directory")
        dirs += sorted(p for p in nodes.iterdir() if p.is_dir())
    dirs += list(getattr(args, "dirs", None) or [])
    if not dirs:
        raise ValueError("no trace directories given (use --trace-dir or --run-dir)")
    return dirs


def _inputs(args, need_log: bool) -> RunInputs:
    def pick(flag, rel):
        v = getattr(args, flag)
        if v is None and args.run_dir is not None and (args.run_dir / rel).exists():
            v = args.run_dir / rel
        return v

    inputs = RunInputs(
        node_dirs=_node_dirs(args),
        nextflow_log=pick("nextflow_log", "nextflow.log"),
        airflow_log=args.airflow_log,
        pod_meta=pick("pod_meta", "k8s/pod_meta.tsv"),
        k8s_events=pick("k8s_events", "k8s/events.txt"),
        filters=Filters(
            dir_prefixes=tuple(args.dir_prefix),
            filesystem=args.filesystem,
            pids=_ints(args.pids),
            pid_subtree=args.pid_subtree,
            uids=_ints(args.uids),
            gids=_ints(args.gids),
        ),
    )
    if need_log and inputs.nextflow_log is None and inputs.airflow_log is None:
        raise ValueError("a workflow log is required (--nextflow-log / --airflow-log), or pass --raw")
    return inputs


def _rule(args) -> MarkerRule:
    if args.markers:
        return MarkerRule(tuple(p.strip() for p in args.markers.split(",") if p.strip()))
    return MarkerRule()


# -- commands ----------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    drop = dict(cfg.loss.drop) if cfg.loss else {}
    if args.drop_all is not None:
        drop = {k: args.drop_all for k in LOSS_KINDS}
    for item in args.drop:
        kind, eq, p = item.partition("=")
        if not eq:
            raise ConfigError(f"--drop expects KIND=P, got {item!r}")
        try:
            drop[kind] = float(p)
        except ValueError:
            raise ConfigError(f"--drop {kind}: not a probability: {p!r}") from None
    if drop or cfg.loss:
        seed = args.loss_seed if args.loss_seed is not None else (cfg.loss.seed if cfg.loss else cfg.seed)
        cfg.loss = LossModel(drop=drop, seed=seed, targets=cfg.loss.targets if cfg.loss else [])
    gt = generate_run(cfg, args.out)
    per_node: dict[str, int] = {}
    for r in gt.rows:
        if not r.dropped:
            per_node[r.node] = per_node.get(r.node, 0) + 1
    print(f"run directory: {args.out}")
    print(f"tasks: {len(cfg.tasks)}  nodes: {len(cfg.nodes)}")
    for node in cfg.nodes:
        print(f"  {node}: {per_node.get(node, 0)} io events")
    print(f"dropped records: {len(gt.ledger)}")
    return EXIT_OK


def cmd_check(args) -> int:
    failed = False
    for d in _node_dirs(args):
        try:
            trace = load_node(d)
        except (TraceParseError, OSError) as e:
            _err(str(e))
            failed = True
            continue
        violations = event_identity_check(trace)
        print(f"{trace.node_id}: {len(trace.io_events)} events, {len(violations)} violations")
        for v in violations:
            print(f"  {v.kind} event#{v.line} handle={v.handle_uid} inode={v.inode_uid}: {v.detail}")
        failed |= bool(violations)
    return EXIT_INPUT if failed else EXIT_OK


def cmd_associate(args) -> int:
    inputs = _inputs(args, need_log=True)
    run = load_run(inputs)
    graphs = build_graphs(run.traces)
    attr = associate_nextflow(run.traces, graphs, run.tasks, _rule(args))
    if run.pods:
        attr = merge_attributions(attr, associate_kubernetes(run.traces, graphs, run.tasks, run.pods))
    attr.check()
    doc = {
        "tool_version": __version__,
        "bindings": [{"node_id": b.node_id, "scope": b.scope, "key": b.key,
                      "since": None if b.since == float("-inf") else b.since,
                      "task_id": b.task_id, "method": b.method.value} for b in attr.sorted_bindings()],
        "conflicts": len(attr.conflicts),
        "unmatched_pods": [p.pod_name for p in attr.unmatched_pods],
        "attributed": {n: sum(t is not None for t in lab) for n, lab in sorted(attr.labels.items())},
        "orphans": {n: sum(t is None for t in lab) for n, lab in sorted(attr.labels.items())},
    }
    text = json.dumps(doc, indent=1) + "\n"
    if args.out and str(args.out) != "-":
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.labels:
        with open(args.labels, "w") as fh:
            fh.write("node,seq,task\n")
            for node in sorted(attr.labels):
                for i, t in enumerate(attr.labels[node]):
                    fh.write(f"{node},{i},{'' if t is None else t}\n")
    return EXIT_OK


def cmd_report(args) -> int:
    inputs = _inputs(args, need_log=not args.raw)
    doc = build_report(inputs, _rule(args), raw=args.raw)
    text = dumps(doc)
    if str(args.out) == "-":
        if args.format != "json":
            raise ValueError("--out - only supports --format json")
        sys.stdout.write(text)
        return EXIT_OK
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.format in ("json", "all"):
        (out / "report.json").write_text(text)
    if args.format in ("csv", "all"):
        write_tables(doc, out)
    if not args.quiet:
        if args.raw:
            print(f"{len(doc['nodes'])} nodes (raw mode) -> {out}")
        else:
            attributed = sum(1 for t in doc["tasks"] if t["profile"])
            print(f"{len(doc['tasks'])} tasks, {attributed} with I/O, {len(doc['lineage'])} lineage edges, "
                  f"{doc['loss']['unattributed_events']} unattributed events -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wfio", description="Attribute per-node I/O traces to workflow tasks.")
    p.add_argument("--version", action="version", version=f"wfio {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic run with ground truth")
    s.add_argument("config", type=Path, help="YAML simulator config")
    s.add_argument("out", type=Path, help="run directory to create")
    s.add_argument("--seed", type=int, help="override the config seed")
    s.add_argument("--drop", action="append", default=[], metavar="KIND=P",
                   help=f"drop probability per record kind ({', '.join(LOSS_KINDS)})")
    s.add_argument("--drop-all", type=float, metavar="P", help="same drop probability for every kind")
    s.add_argument("--loss-seed", type=int)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("check", help="audit handle/inode identity rules")
    c.add_argument("dirs", nargs="*", type=Path)
    _add_input_flags(c, with_logs=False)
    c.set_defaults(func=cmd_check)

    a = sub.add_parser("associate", help="bind tasks to cgroups/processes")
    _add_input_flags(a)
    a.add_argument("--out", default="-", help="JSON output file, '-' for stdout")
    a.add_argument("--labels", type=Path, help="also write per-event task labels as CSV")
    a.set_defaults(func=cmd_associate)

    r = sub.add_parser("report", help="full pipeline: report document and plot tables")
    _add_input_flags(r)
    r.add_argument("--out", required=True, help="output directory, or '-' for JSON on stdout")
    r.add_argument("--format", choices=("json", "csv", "all"), default="all")
    r.add_argument("--raw", action="store_true", help="no workflow log: per-node statistics only")
    r.add_argument("-q", "--quiet", action="store_true")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="wfio: %(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except AssertionError as e:
        _err(f"internal invariant violated: {e}")
        return EXIT_INTERNAL
    except (TraceParseError, ConfigError, AssociationError, argparse.ArgumentTypeError,
            OSError, ValueError) as e:
        _err(str(e))
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
