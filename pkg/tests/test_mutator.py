import pytest

from gclab.abstract_graph import NodeRef, Prim
from gclab.errors import ConfigError, ContractViolation, InvariantViolation, OutOfMemory
from gclab.mutator import GCConfig, MutatorHandle, Shape, initialize, normalize_shape

BOTH = ["marksweep", "copying"]
PAIR = Shape.of(4, [2, 3])


@pytest.mark.parametrize("collector", BOTH)
def test_initialize_establishes_mutator_inv(collector):
    h = initialize(collector=collector, heap_bytes=4096)
    assert h.check_mutator().passed
    assert h.check_gc().passed          # outside a collection GcInv falls back to MutatorInv


@pytest.mark.parametrize("kw", [
    dict(heap_bytes=10), dict(heap_bytes=4098), dict(collector="nope"),
    dict(check="loud"), dict(mem_lo=0), dict(root_slots=0),
    dict(collector="copying", heap_bytes=1028),
])
def test_bad_configs(kw):
    with pytest.raises(ConfigError):
        initialize(**kw)


def test_shape_normalization():
    assert normalize_shape(PAIR) == (4, (False, False, True, True))
    assert normalize_shape((3, [False, False, True])) == (3, (False, False, True))
    assert normalize_shape((False, False)) == (2, (False, False))
    assert normalize_shape("..p.") == (4, (False, False, True, False))
    with pytest.raises(ContractViolation):
        normalize_shape("p.")


@pytest.mark.parametrize("collector", BOTH)
def test_fresh_fields_are_zero(collector):
    h = initialize(collector=collector, heap_bytes=4096)
    p, node = h.alloc(Shape.of(5, [2]))
    assert h.read_field(p, 2) == 0 and h.read_field(p, 4) == 0
    assert h.read_value(p, 2) == Prim(0)


@pytest.mark.parametrize("collector", BOTH)
def test_write_then_read(collector):
    h = initialize(collector=collector, heap_bytes=4096)
    p, _ = h.alloc(Shape.of(5, [2]))
    q, nq = h.alloc(PAIR)
    h.write_field(p, 2, q)
    h.write_field(p, 3, 99)
    assert h.read_field(p, 2) == q
    assert h.read_value(p, 2) == NodeRef(nq)
    assert h.read_value(p, 3) == Prim(99)


@pytest.mark.parametrize("collector", BOTH)
def test_self_reference_keeps_invariants(collector):
    h = initialize(collector=collector, heap_bytes=4096, check="step")
    p, _ = h.alloc(PAIR)
    h.write_field(p, 2, p)
    assert h.check_mutator().passed


@pytest.mark.parametrize("collector", BOTH)
def test_contract_violations(collector):
    h = initialize(collector=collector, heap_bytes=4096)
    p, _ = h.alloc(Shape.of(4, [2]))
    with pytest.raises(ContractViolation):
        h.read_field(p + 4, 2)              # not canonical
    with pytest.raises(ContractViolation):
        h.write_field(p, 1, 0)              # header
    with pytest.raises(ContractViolation):
        h.write_field(p, 2, h.mem_lo + 512)  # dangling
    with pytest.raises(ContractViolation):
        h.set_root(99, 0)


@pytest.mark.parametrize("collector", BOTH)
def test_oversized_alloc_is_oom(collector):
    h = initialize(collector=collector, heap_bytes=4096)
    with pytest.raises(OutOfMemory):
        h.alloc(Shape.of(4096 // 4 + 1))
    assert len(h.ghost.abs_heap) == 0
    assert h.alloc(PAIR)[1] == 1            # node ids are not burnt by the failure


@pytest.mark.parametrize("collector", BOTH)
def test_collect_with_empty_roots_frees_everything(collector):
    h = initialize(collector=collector, heap_bytes=4096)
    for _ in range(8):
        h.alloc(PAIR)
    h.collect()
    assert h.live_nodes() == set()


@pytest.mark.parametrize("collector", BOTH)
def test_survivors_equal_oracle_reachable(collector):
    h = initialize(collector=collector, heap_bytes=4096)
    ptrs = [h.alloc(PAIR) for _ in range(6)]
    (a, na), (b, nb), (c, nc) = ptrs[:3]
    h.write_field(a, 2, b)
    h.write_field(b, 3, c)
    h.set_root(0, a)
    h.collect()
    assert h.live_nodes() == {na, nb, nc} == h.ghost.abs_heap.reachable_set([na])
    assert h.stats["survival_checks"] == 1 and h.stats["effectiveness_checks"] == 1


def test_read_detects_tampered_word():
    h = initialize(collector="marksweep", heap_bytes=4096)
    p, _ = h.alloc(Shape.of(4, [2]))
    h.heap.store(p + 8, 7)
    with pytest.raises(InvariantViolation) as e:
        h.read_field(p, 3)
    assert "ObjInv" in e.value.report.predicates()


def test_trace_hook_records_ops():
    h = initialize(collector="marksweep", heap_bytes=4096)
    seen = []
    h.trace_hook = seen.append
    p, _ = h.alloc(PAIR)
    h.set_root(0, p)
    h.collect()
    assert [e["op"] for e in seen] == ["alloc", "set_root", "collect"]
    assert seen[-1]["epoch"] == 1


@pytest.mark.parametrize("collector", BOTH)
def test_snapshot_round_trip(collector):
    h = initialize(collector=collector, heap_bytes=4096)
    p, _ = h.alloc(PAIR)
    h.write_field(p, 2, p)
    h.set_root(0, p)
    h.collect()
    back = MutatorHandle.from_snapshot(h.snapshot())
    assert back.heap.content_hash() == h.heap.content_hash()
    assert back.check_mutator().passed
    assert back.live_nodes() == h.live_nodes()
    assert back.collector.state_json() == h.collector.state_json()
    q, _ = back.alloc(PAIR)
    back.write_field(q, 2, back.root_object(0))
    assert back.check_mutator().passed


def test_config_json_round_trip():
    cfg = GCConfig(collector="copying", heap_bytes=8192, check="step")
    assert GCConfig.from_json({**cfg.to_json(), "junk": 1}) == cfg
