import pytest
from hypothesis import given, settings, strategies as st

from wfio.analysis import (
    NoObservedIo, access_timeline, bulkiness_histogram, compute_profiles, cross_task_lineage,
    loss_report, span_fraction, task_runtime,
)
from wfio.association import Attribution
from wfio.model import IoEvent, Kind, NodeTrace

H = iter(range(1, 10**9))


def ev(t, kind, inode=1, handle=1, path="", offset=0, size=0, dur=0.0, pid=10):
    res = size if kind in (Kind.READ, Kind.WRITE) else 0
    return IoEvent(t, t + dur, pid, 0, 0, 0, 0, inode, kind, res, handle, offset, size, 0, path)


def attr_of(per_node: dict[str, list[tuple[IoEvent, int | None]]]) -> Attribution:
    traces, labels = {}, {}
    for node, items in per_node.items():
        items = sorted(items, key=lambda x: x[0].time_start)
        traces[node] = NodeTrace(node, tuple(e for e, _ in items))
        labels[node] = [t for _, t in items]
    return Attribution(bindings={}, labels=labels, traces=traces)


def single(events, task=1, node="n"):
    return attr_of({node: [(e, task) for e in events]})


def test_runtime_window():
    a = single([ev(100.0, Kind.OPEN, path="/f", dur=1.0), ev(109.0, Kind.CLOSE, dur=1.0)])
    assert task_runtime(a, 1) == (100.0, 110.0)
    assert task_runtime(single([ev(5.0, Kind.OPEN, path="/f")]), 1) == (5.0, 5.0)


def test_no_events():
    with pytest.raises(NoObservedIo):
        task_runtime(single([ev(1.0, Kind.OPEN, path="/f")]), 2)


def test_span_fraction_formula():
    a = single([ev(100.0, Kind.OPEN, path="/f"), ev(103.0, Kind.READ, size=1), ev(105.0, Kind.READ, size=1),
                ev(110.0, Kind.CLOSE)])
    assert span_fraction(a, 1, "/f") == pytest.approx(0.2, abs=1e-12)


def test_single_access_is_zero():
    a = single([ev(100.0, Kind.OPEN, path="/f"), ev(103.0, Kind.READ, size=1), ev(110.0, Kind.CLOSE)])
    assert span_fraction(a, 1, "/f") == 0.0


def test_file_never_read_or_written():
    a = single([ev(100.0, Kind.OPEN, path="/f"), ev(110.0, Kind.CLOSE)])
    with pytest.raises(KeyError):
        span_fraction(a, 1, "/f")
    with pytest.raises(KeyError):
        span_fraction(a, 1, "/other")
    assert access_timeline(a, 1, "/f") == []


def producer_events(base=100.0, runtime=9.91):
    return [
        ev(base, Kind.OPEN, inode=9, handle=1, path="/w/p/.command.sh"),
        ev(base + 0.30 * runtime, Kind.OPEN, inode=2, handle=2, path="/w/p/out.fq.gz"),
        ev(base + 0.32 * runtime, Kind.WRITE, inode=2, handle=2, offset=0, size=4096),
        ev(base + 0.42 * runtime, Kind.WRITE, inode=2, handle=2, offset=4096, size=4096),
        ev(base + 0.43 * runtime, Kind.CLOSE, inode=2, handle=2),
        ev(base + runtime, Kind.CLOSE, inode=9, handle=1),
    ]


def test_producer_fixture():
    a = single(producer_events())
    t0, t1 = task_runtime(a, 1)
    assert t1 - t0 == pytest.approx(9.91, abs=1e-9)
    assert span_fraction(a, 1, "/w/p/out.fq.gz") == pytest.approx(0.10, abs=0.01)
    rows = access_timeline(a, 1, "/w/p/out.fq.gz")
    assert [(r.kind, r.offset, r.size) for r in rows] == [("W", 0, 4096), ("W", 4096, 4096)]
    assert rows[0].t_rel == pytest.approx(0.32, abs=0.01) and rows[1].t_rel == pytest.approx(0.42, abs=0.01)


def test_consumer_fixture_and_lineage():
    runtime = 24.16
    base = 120.0
    cons = [ev(base, Kind.OPEN, inode=5, handle=10, path="/w/p/out.fq.gz")]
    cons += [ev(base + runtime * (0.02 + 0.04 * k), Kind.READ, inode=5, handle=10, offset=65536 * k, size=65536)
             for k in range(25)]
    cons += [ev(base + runtime, Kind.CLOSE, inode=5, handle=10)]
    a = attr_of({"n1": [(e, 1) for e in producer_events()], "n2": [(e, 2) for e in cons]})
    rows = access_timeline(a, 2, "/w/p/out.fq.gz")
    assert rows[-1].t_rel - rows[0].t_rel >= 0.9
    profiles = compute_profiles(a)
    edges = cross_task_lineage(a, profiles)
    assert [(e.producer, e.consumer, e.path) for e in edges] == [(1, 2, "/w/p/out.fq.gz")]


def test_lineage_same_node_uses_inode_and_needs_order():
    # same node: consumer opens the file under another name (hard link) -> still linked by inode
    w = [ev(1.0, Kind.OPEN, inode=3, handle=1, path="/a"), ev(2.0, Kind.WRITE, inode=3, handle=1, size=1)]
    r = [ev(3.0, Kind.OPEN, inode=3, handle=2, path="/link"), ev(4.0, Kind.READ, inode=3, handle=2, size=1)]
    a = attr_of({"n": [(e, 1) for e in w] + [(e, 2) for e in r]})
    (edge,) = cross_task_lineage(a, compute_profiles(a))
    assert (edge.producer, edge.consumer) == (1, 2)
    # a read before the first write gives no edge
    early = [ev(0.5, Kind.OPEN, inode=3, handle=3, path="/a"), ev(0.6, Kind.READ, inode=3, handle=3, size=1)]
    b = attr_of({"n": [(e, 1) for e in w] + [(e, 2) for e in early]})
    assert cross_task_lineage(b, compute_profiles(b)) == []


def test_lineage_chain_and_disjoint():
    def io(t, node_task, kind, path, h):
        return [(ev(t, Kind.OPEN, inode=h, handle=h, path=path), node_task),
                (ev(t + 0.1, kind, inode=h, handle=h, size=1), node_task)]
    items = (io(1, 1, Kind.WRITE, "/x", 1) + io(2, 2, Kind.READ, "/x", 2) + io(3, 2, Kind.WRITE, "/y", 3)
             + io(4, 3, Kind.READ, "/y", 4))
    # each task on its own node so only paths link them
    per = {}
    for e, t in items:
        per.setdefault(f"n{t}", []).append((e, t))
    a = attr_of(per)
    assert [(e.producer, e.consumer) for e in cross_task_lineage(a, compute_profiles(a))] == [(1, 2), (2, 3)]
    d = attr_of({"n1": io(1, 1, Kind.WRITE, "/x", 1), "n2": io(2, 2, Kind.READ, "/z", 2)})
    assert cross_task_lineage(d, compute_profiles(d)) == []


def test_histogram_bins():
    # fractions 0, 0.5 and 1.0 via three files of one task over [0, 10]
    evs = [ev(0.0, Kind.OPEN, inode=1, handle=1, path="/a"), ev(0.0, Kind.READ, inode=1, handle=1, size=1)]
    evs += [ev(0.0, Kind.OPEN, inode=2, handle=2, path="/b"), ev(2.0, Kind.READ, inode=2, handle=2, size=1),
            ev(7.0, Kind.READ, inode=2, handle=2, size=1)]
    evs += [ev(0.0, Kind.OPEN, inode=3, handle=3, path="/c"), ev(0.0, Kind.READ, inode=3, handle=3, size=1),
            ev(10.0, Kind.READ, inode=3, handle=3, size=1)]
    prof = compute_profiles(single(evs))
    counts = bulkiness_histogram(prof.values(), 10)
    assert counts == [1, 0, 0, 0, 0, 1, 0, 0, 0, 1]
    assert bulkiness_histogram([], 4) == [0, 0, 0, 0]
    with pytest.raises(ValueError):
        bulkiness_histogram([], 0)


def test_bytes_count_result_not_size():
    short = ev(1.0, Kind.READ, size=4096)
    short = IoEvent(*[getattr(short, f) for f in ("time_start", "time_end", "pid", "utime_start", "utime_end",
                                                  "stime_start", "stime_end", "inode_uid", "kind")],
                    100, 1, 0, 4096, 0, "")
    a = single([ev(0.0, Kind.OPEN, path="/f"), short])
    assert compute_profiles(a)[1].bytes_read == 100


# -- brute-force comparison over random event sets --------------------------------------------

@st.composite
def event_sets(draw):
    n_files = draw(st.integers(1, 4))
    out, h = [], 0
    for f in range(n_files):
        h += 1
        t = draw(st.floats(0, 100))
        out.append(ev(t, Kind.OPEN, inode=f + 1, handle=h, path=f"/f{f}"))
        for _ in range(draw(st.integers(0, 6))):
            kind = draw(st.sampled_from([Kind.READ, Kind.WRITE, Kind.CLOSE]))
            out.append(ev(draw(st.floats(0, 100)), kind, inode=f + 1, handle=h,
                          size=draw(st.integers(0, 10_000)), dur=draw(st.floats(0, 5))))
    return out


def brute(events, inode):
    t0 = min(e.time_start for e in events)
    t1 = max(e.time_end for e in events)
    acc = [e for e in events if e.inode_uid == inode and e.kind in (Kind.READ, Kind.WRITE)]
    if not acc:
        return None
    if t1 == t0:
        return 0.0
    return (max(e.time_end for e in acc) - min(e.time_start for e in acc)) / (t1 - t0)


@settings(max_examples=200)
@given(event_sets())
def test_span_fraction_matches_brute_force(events):
    prof = compute_profiles(single(events))[1]
    for row in prof.files:
        expect = brute(events, row.inode_uid)
        if expect is None:
            assert row.span_fraction is None
        else:
            assert abs(row.span_fraction - expect) <= 1e-9
            assert 0.0 <= row.span_fraction <= 1.0
            assert prof.t0 <= row.first_access <= row.last_access <= prof.t1
    total = sum(bulkiness_histogram([prof], 10))
    assert total == sum(r.span_fraction is not None for r in prof.files)
    assert prof.bytes_read == sum(e.result for e in events if e.kind is Kind.READ)


@settings(max_examples=50)
@given(event_sets(), event_sets())
def test_node_order_does_not_matter(a, b):
    x = attr_of({"n1": [(e, 1) for e in a], "n2": [(e, 2) for e in b]})
    y = attr_of({"n2": [(e, 2) for e in b], "n1": [(e, 1) for e in a]})
    px, py = compute_profiles(x), compute_profiles(y)
    assert {k: (p.t0, p.t1, [vars(f) for f in p.files]) for k, p in px.items()} == \
           {k: (p.t0, p.t1, [vars(f) for f in p.files]) for k, p in py.items()}
    assert cross_task_lineage(x, px) == cross_task_lineage(y, py)


def test_loss_report_causes():
    evs = (ev(1.0, Kind.READ, handle=7, size=1), ev(2.0, Kind.CLOSE, handle=7), ev(3.0, Kind.OPEN, handle=8, path="/x"))
    quiet = loss_report([NodeTrace("n", evs)])
    (n,) = quiet.nodes
    assert (n.orphan_events, n.orphan_handles, n.orphan_cause, n.unattributed_events) == (2, 1, "PreExistingHandle", 3)
    warned = loss_report([NodeTrace("n", evs, loss_warning=True)])
    assert warned.nodes[0].orphan_cause == "LostRecord"
    clean = loss_report([NodeTrace("n", evs[2:])])
    assert clean.orphan_events == 0 and clean.nodes[0].orphan_cause is None


def test_histogram_small_files_near_zero(tmp_path):
    from pathlib import Path

    from helpers import attribute
    from wfio.simulator import generate_run, load_config

    generate_run(load_config(Path(__file__).parent / "fixtures" / "bulkiness.yaml"), tmp_path)
    _, attr = attribute(tmp_path)
    counts = bulkiness_histogram(compute_profiles(attr).values(), 10)
    assert counts[0] == 12 and counts[-1] == 1 and sum(counts) == 13
