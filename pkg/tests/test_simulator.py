import hashlib
import io
from pathlib import Path

import pytest
import yaml

from helpers import attribute, compare_to_truth
from wfio.analysis import loss_report
from wfio.association import associate_kubernetes
from wfio.ingest import load_node, parse_io_trace_line
from wfio.model import Kind, event_identity_check
from wfio.simulator import (
    ConfigError, LossModel, SimConfig, StepConfig, TaskConfig, config_from_dict, config_to_dict,
    generate_run, inject_loss, load_config, random_config, read_ground_truth,
)


def digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def chain_config(container=True) -> SimConfig:
    writer = TaskConfig("WRITER (a)", "node1", [
        StepConfig("open", "out.txt", mode="w"),
        StepConfig("write", "out.txt", size=1000, count=3),
        StepConfig("close", "out.txt"),
    ], container=container)
    reader = TaskConfig("READER (a)", "node1", [
        StepConfig("open", "@WRITER (a)/out.txt"),
        StepConfig("read", "@WRITER (a)/out.txt", size=500, count=6, pattern="strided", stride=500),
        StepConfig("close", "@WRITER (a)/out.txt"),
    ], container=container, after=["WRITER (a)"], procs=1)
    return SimConfig([writer, reader])


def test_empty_dag(tmp_path):
    gt = generate_run(SimConfig(), tmp_path)
    assert gt.rows == []
    tr = load_node(tmp_path / "nodes" / "node1")
    assert tr.io_events == () and tr.fork_events == ()
    assert "Task completed" not in (tmp_path / "nextflow.log").read_text()


@pytest.mark.parametrize("container", [True, False])
def test_two_task_chain(tmp_path, container):
    cfg = chain_config(container)
    gt = generate_run(cfg, tmp_path)
    expected = sum(s.count for t in cfg.tasks for s in t.steps) + 4 * len(cfg.tasks)
    assert len(gt.rows) == expected
    run, attr = attribute(tmp_path)
    assert compare_to_truth(attr, gt) == {"events": expected, "wrong": 0, "missed": 0, "spurious": 0}
    assert attr.orphans() == []
    methods = {b.method.value for b in attr.bindings.values()}
    # agreeing pod-label bindings are absorbed by the marker bindings
    assert methods == ({"WorkDirMarker"} if container else {"ProcessSubtree"})
    k8s = associate_kubernetes(run.traces, None, run.tasks, run.pods)
    assert k8s.labels == attr.labels if container else run.pods == []


def test_reader_sees_producer_path(tmp_path):
    generate_run(chain_config(), tmp_path)
    tr = load_node(tmp_path / "nodes" / "node1")
    opens = [e.path for e in tr.io_events if e.kind is Kind.OPEN and e.path.endswith("out.txt")]
    assert len(opens) == 2 and opens[0] == opens[1]
    reads = [e.offset for e in tr.io_events if e.kind is Kind.READ]
    assert reads == [0, 500, 1000, 1500, 2000, 2500]


def test_four_nodes(tmp_path):
    cfg = random_config(3, n_nodes=4, n_tasks=12, container=True)
    generate_run(cfg, tmp_path)
    assert sorted(p.name for p in (tmp_path / "nodes").iterdir()) == ["node1", "node2", "node3", "node4"]
    rows = [l for l in (tmp_path / "k8s" / "pod_meta.tsv").read_text().splitlines() if l.strip() and not l.startswith("#")]
    assert len(rows) == 12


@pytest.mark.parametrize("seed", range(6))
def test_generated_runs_pass_identity_check(tmp_path, seed):
    generate_run(random_config(seed), tmp_path)
    for d in (tmp_path / "nodes").iterdir():
        assert event_identity_check(load_node(d)) == []


def test_ids_increase_per_node(tmp_path):
    generate_run(random_config(11, n_nodes=2), tmp_path)
    for d in (tmp_path / "nodes").iterdir():
        tr = load_node(d)
        hs = [e.handle_uid for e in tr.io_events if e.kind is Kind.OPEN]
        assert hs == sorted(hs) and len(set(hs)) == len(hs)


def test_deterministic(tmp_path):
    cfg = random_config(5)
    generate_run(cfg, tmp_path / "a")
    generate_run(random_config(5), tmp_path / "b")
    assert digest(tmp_path / "a") == digest(tmp_path / "b")


def test_zero_loss_is_identity(tmp_path):
    generate_run(random_config(2), tmp_path)
    before = digest(tmp_path)
    gt = inject_loss(tmp_path, LossModel(drop={"open": 0.0, "read": 0.0}))
    assert gt.ledger == [] and digest(tmp_path) == before
    assert not (tmp_path / "drop_ledger.csv").exists()


def test_loss_deterministic(tmp_path):
    for name in ("a", "b"):
        generate_run(random_config(4), tmp_path / name)
        inject_loss(tmp_path / name, LossModel(drop={"read": 0.2, "fork": 0.2}, seed=3))
    assert digest(tmp_path / "a") == digest(tmp_path / "b")


def test_targeted_open_drops(tmp_path):
    cfg = random_config(8, n_nodes=1, n_tasks=6)
    gt = generate_run(cfg, tmp_path)
    node = "node1"
    lines = [l for l in (tmp_path / "nodes" / node / "io_trace.csv").read_text().splitlines()
             if l and not l.startswith("#")]
    # pick three data-file opens that have reads or writes after them
    evs = [parse_io_trace_line(l) for l in lines]
    picks = []
    for i, e in enumerate(evs):
        if e.kind is Kind.OPEN and not e.path.rsplit("/", 1)[1].startswith("."):
            if any(x.handle_uid == e.handle_uid and x.kind in (Kind.READ, Kind.WRITE) for x in evs[i + 1:]):
                picks.append(i)
    picks = picks[:3]
    gt = inject_loss(tmp_path, LossModel(targets=[(node, "io", i) for i in picks]))
    assert [r.seq for r in gt.ledger] == picks
    assert (tmp_path / "nodes" / node / "loss_warning.txt").exists()
    tr = load_node(tmp_path / "nodes" / node)
    rep = loss_report([tr])
    assert rep.orphan_handles == 3 and rep.nodes[0].orphan_cause == "LostRecord"
    expected_events = sum(1 for e in evs if e.handle_uid in {evs[i].handle_uid for i in picks}
                          and e.kind is not Kind.OPEN)
    assert rep.orphan_events == expected_events
    assert sum(r.dropped for r in read_ground_truth(tmp_path).rows) == 3


def test_truncated_prefix_is_pre_existing(tmp_path):
    generate_run(random_config(9, n_nodes=1), tmp_path)
    p = tmp_path / "nodes" / "node1" / "io_trace.csv"
    lines = p.read_text().splitlines(keepends=True)
    header = [l for l in lines if l.startswith("#")]
    data = [l for l in lines if not l.startswith("#")]
    p.write_text("".join(header + data[len(data) // 3:]))
    rep = loss_report([load_node(p.parent)])
    assert rep.orphan_events > 0 and rep.nodes[0].orphan_cause == "PreExistingHandle"


def test_collide_mode_shares_pids_but_stays_separate(tmp_path):
    cfg = random_config(21, n_nodes=3, n_tasks=12, collide_pids=True)
    gt = generate_run(cfg, tmp_path)
    pids = {}
    for r in gt.rows:
        pids.setdefault(r.node, set()).add(r.pid)
    shared = set.intersection(*pids.values())
    assert shared
    run, attr = attribute(tmp_path)
    c = compare_to_truth(attr, gt)
    assert c["wrong"] == c["missed"] == c["spurious"] == 0


def test_noise_is_unbound(tmp_path):
    cfg = chain_config()
    cfg.noise_events = 10
    gt = generate_run(cfg, tmp_path)
    run, attr = attribute(tmp_path)
    assert compare_to_truth(attr, gt)["wrong"] == 0
    assert len(attr.orphans()) == 10 == sum(r.task is None for r in gt.rows)


def test_config_yaml_round_trip(tmp_path):
    cfg = random_config(13)
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump(config_to_dict(cfg)))
    assert load_config(p) == cfg


@pytest.mark.parametrize("data,key", [
    ({"tasks": [{"name": "a", "node": "nodeX"}]}, "node"),
    ({"tasks": [{"name": "a", "node": "node1", "steps": [{"op": "chmod", "file": "x"}]}]}, "op"),
    ({"tasks": [], "bogus": 1}, "bogus"),
    ({"loss": {"drop": {"open": 2.0}}}, "loss.drop.open"),
    ({"tasks": [{"name": "a", "node": "node1", "after": ["b"]}]}, "after"),
])
def test_config_errors_name_key(data, key):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        config_from_dict(data).validate()


def test_cycle_rejected():
    data = {"tasks": [{"name": "a", "node": "node1", "after": ["b"]},
                      {"name": "b", "node": "node1", "after": ["a"]}]}
    with pytest.raises(ConfigError, match="cycle"):
        generate_run(config_from_dict(data), "/nonexistent/never")
