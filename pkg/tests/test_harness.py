import random

import pytest

from gclab.errors import ContractViolation, GCLabError, OutOfMemory
from gclab.harness.faults import LossyDescriptors, inject
from gclab.harness.minigraph import (abstract_marked, practical_marked, random_mini_graph,
                                     ref_marked)
from gclab.harness.reference import UNALLOC, RefCopy, RefMarkSweep
from gclab.harness.workload import (AbstractModel, WorkloadTrace, differential, generate, run,
                                    shrink)
from gclab.mutator import GCConfig, initialize

SMALL = GCConfig(heap_bytes=4096, root_slots=16)


# -- reference collectors ------------------------------------------------------------


def fig1(collector):
    """A1 -> A2/A3, A2 -> A2/A3, A3 -> A1/A3, plus an unreachable A4."""
    ptrs = [collector.alloc([])[0] for _ in range(4)]
    a1, a2, a3, _ = ptrs
    for src, (x, y) in ((a1, (a2, a3)), (a2, (a2, a3)), (a3, (a1, a3))):
        collector.write_field(src, 0, x)
        collector.write_field(src, 1, y)
    return ptrs


def test_fig1_ref_ms_unmaps_a4():
    c = RefMarkSweep(num_objects=8)
    a1, _, _, a4 = fig1(c)
    abs4 = c.to_abs[a4]
    c.collect([a1])
    assert abs4 == 4 and abs4 not in c.live_nodes()
    assert c.live_nodes() == {1, 2, 3}
    assert c.color[a4] == UNALLOC
    assert c.check().passed


def test_fig1_ref_copy_unmaps_a4():
    c = RefCopy(semispace=8)
    ptrs = fig1(c)
    roots = [ptrs[0]]
    c.collect(roots)
    assert c.live_nodes() == {1, 2, 3}
    assert c.to_abs[roots[0]] == 1
    assert c.check().passed


def test_ref_ms_null_root_frees_all():
    c = RefMarkSweep(num_objects=4)
    fig1(c)
    c.collect([0])
    assert c.live_nodes() == set()


def test_ref_ms_mark_visits_bounded():
    c = RefMarkSweep(num_objects=8)
    a1 = fig1(c)[0]
    black = c.mark_roots([a1])
    assert len(black) == 3
    # each reached object is shaded once; every visit beyond that is a cheap rejection
    assert c.mark_visits == 1 + 2 * len(black)


def test_ref_copy_self_pointer_survives_at_ti():
    c = RefCopy(semispace=4)
    p, node = c.alloc([])
    ti = c.Ti
    roots = [p]
    c.collect(roots)
    assert roots[0] == ti
    assert c.mem[ti] == [ti, ti]
    assert c.to_abs[ti] == node


def test_ref_copy_copies_each_live_node_once():
    c = RefCopy(semispace=8)
    ptrs = fig1(c)
    c.collect([ptrs[0], ptrs[1], ptrs[2]])
    assert c.copies == 3


def test_ref_out_of_memory():
    c = RefMarkSweep(num_objects=2)
    roots = []
    for _ in range(2):
        roots.append(c.alloc(roots)[0])
    with pytest.raises(OutOfMemory):
        c.alloc(roots)


def test_ref_write_contract():
    c = RefMarkSweep(num_objects=2)
    p, _ = c.alloc([])
    with pytest.raises(ContractViolation):
        c.write_field(p, 2, p)
    with pytest.raises(ContractViolation):
        c.write_field(p, 0, 2)


def test_ref_live_sets_agree_on_mini_trace():
    t = generate(5, 1500, "mini", SMALL)
    res = differential(t, ["ref-ms", "ref-copy", "marksweep", "copying"])
    assert res.passed, res.report.dumps()
    collects = [o for o in res.oracle if o[0] == "collect"]
    assert collects
    for name, log in res.logs.items():
        assert [o for o in log.entries if o[0] == "collect"] == collects, name


# -- miniature graph equivalence ---------------------------------------------------------


def test_mark_equivalence_sample():
    rng = random.Random(11)
    for _ in range(300):
        g = random_mini_graph(rng)
        assert practical_marked(g) == ref_marked(g) == abstract_marked(g)


def test_two_node_cycle_mini_graph():
    from gclab.harness.minigraph import MiniGraph
    g = MiniGraph([(1, 1), (0, 0), (2, 2)], [0])
    assert practical_marked(g) == ref_marked(g) == {1, 2}


# -- workloads ----------------------------------------------------------------------------


def test_generate_deterministic_and_exact_length():
    a = generate(3, 500, "weave", SMALL)
    b = generate(3, 500, "weave", SMALL)
    assert a.ops == b.ops and len(a) == 500
    assert generate(4, 500, "weave", SMALL).ops != a.ops
    with pytest.raises(GCLabError):
        generate(1, 10, "nope")


def test_trace_round_trip(tmp_path):
    t = generate(2, 200, "churn", SMALL)
    path = tmp_path / "t.jsonl"
    t.save(str(path))
    back = WorkloadTrace.load(str(path))
    assert back.ops == t.ops and back.seed == 2 and back.profile == "churn"
    assert back.gc_config() == t.gc_config()
    first = path.read_text().splitlines()[0]
    assert '"format": "gclab-trace/1"' in first


def test_same_seed_same_observations():
    t = generate(9, 800, "binder", SMALL)
    a, b = run(t, "marksweep"), run(t, "marksweep")
    assert a.entries == b.entries and a.dumps() == b.dumps()


@pytest.mark.parametrize("profile", ["churn", "binder", "weave"])
def test_differential_small_heap(profile):
    t = generate(1, 1500, profile, SMALL)
    res = differential(t)
    assert res.passed, res.report.dumps()
    assert res.divergences == 0 and res.violations == 0
    assert all(log.stats["collections"] > 0 for log in res.logs.values())


def test_invalid_ops_are_skipped_everywhere():
    t = WorkloadTrace(0, "manual", [
        {"op": "read", "slot": 0, "path": [2]},            # empty slot
        {"op": "alloc", "slot": 0, "kinds": "..p"},
        {"op": "write", "slot": 0, "path": [2], "src": ["prim", 4096 + 8]},  # GC-space prim
        {"op": "dup", "src": 0, "dst": 1, "offset": 2},     # unaligned
        {"op": "read", "slot": 0, "path": [2]},
        {"op": "collect"},
    ], SMALL.to_json())
    res = differential(t)
    assert res.passed
    assert [res.oracle[i] for i in (0, 2, 3)] == [["skip"]] * 3
    assert res.oracle[-2:] == [["read", ["p", 0]], ["collect", [1]]]


def test_oom_floor_rule():
    model_cfg = dict(SMALL.to_json(), heap_bytes=1024)
    # every object stays rooted, so a late OOM is legitimate and not a divergence
    ops = [{"op": "alloc", "slot": i, "kinds": "." * 32} for i in range(16)]
    res = differential(WorkloadTrace(0, "manual", ops, model_cfg))
    assert res.passed
    assert {log.status for log in res.logs.values()} == {"oom"}


def test_fault_injection_detected_and_shrunk():
    cfg = GCConfig(heap_bytes=4096, root_slots=8)
    t = generate(7, 600, "weave", cfg)
    assert differential(t, ["marksweep"]).passed

    def fails(tr):
        return not differential(tr, ["marksweep"], fault="lossy-trace").passed

    assert fails(t)
    small = shrink(t, fails)
    assert len(small) <= 20 and fails(small)
    assert differential(small, ["marksweep"]).passed
    # the minimized trace replays to the same report after serialization
    again = WorkloadTrace.loads(small.dumps())
    r1 = differential(small, ["marksweep"], fault="lossy-trace").report.dumps()
    r2 = differential(again, ["marksweep"], fault="lossy-trace").report.dumps()
    assert r1 == r2


def test_lossy_descriptors_hide_last_pointer():
    h = initialize(heap_bytes=4096)
    did = h.descriptors.intern((False, False, True, False, True))
    lossy = LossyDescriptors(h.descriptors)
    assert lossy.layout(did) == (5, (False, False, True, False, False))
    assert lossy.size_of(did) == 20
    with pytest.raises(GCLabError):
        inject(h, "no-such-fault")


def test_abstract_model_target_paths():
    m = AbstractModel(2, (4096, 8192))
    m.apply({"op": "alloc", "slot": 0, "kinds": "..p."})
    assert m.target(0, [2]) == (1, 2)
    assert m.target(0, [2, 2]) is None          # null pointer cannot be followed
    assert m.target(0, [3, 2]) is None          # primitive hop
    assert m.target(1, [2]) is None
