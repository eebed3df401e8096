import pytest

from gclab.abstract_graph import NodeRef
from gclab.errors import OutOfMemory
from gclab.harness.corruptions import paused_collection
from gclab.invariants import check_gc_inv, check_mutator_inv
from gclab.mutator import Shape, initialize

PAIR = Shape.of(4, [2, 3])


def cp(**kw):
    kw.setdefault("collector", "copying")
    kw.setdefault("heap_bytes", 4096)
    kw.setdefault("check", "gc")
    return initialize(**kw)


def test_space_split():
    h = cp()
    c = h.collector
    assert (c.Fi, c.Fk, c.Fl) == (h.mem_lo, h.mem_lo, h.mem_lo + 2048)
    assert (c.Ti, c.Tj, c.Tk, c.Tl) == (c.Fl, c.Fl, c.Fl, h.mem_hi)


def test_first_pointer_and_bump():
    h = cp()
    c = h.collector
    p1, _ = h.alloc(PAIR)
    p2, _ = h.alloc(Shape.of(6))
    assert p1 == c.Fi + 4
    assert p2 - p1 == 16
    assert c.Fk == c.Fi + 16 + 24
    assert h.heap.started_bases() == [p1 - 4, p2 - 4]


def test_exact_fill_then_collect():
    h = cp(heap_bytes=1024)
    c = h.collector
    n = (c.Fl - c.Fi) // 16
    ptrs = [h.alloc(PAIR)[0] for _ in range(n)]
    assert c.Fk == c.Fl and c.metrics == []
    h.set_root(0, ptrs[-1])
    h.alloc(PAIR)
    assert len(c.metrics) == 1
    assert c.metrics[0].objects_copied == 1


def test_out_of_memory_when_survivors_fill_space():
    h = cp(heap_bytes=1024, root_slots=64)
    with pytest.raises(OutOfMemory):
        for i in range(64):
            p, _ = h.alloc(PAIR)
            h.set_root(i, p)


def test_roots_rewritten_and_graph_preserved():
    h = cp()
    a, na = h.alloc(PAIR)
    b, nb = h.alloc(PAIR)
    h.alloc(PAIR)                               # garbage
    h.write_field(a, 2, b)
    h.write_field(b, 3, a)
    h.set_root(0, a)
    before = [h.read_value(a, 2), h.read_value(b, 3)]
    m = h.collect()
    a2 = h.root(0)
    assert a2 != a and h.root_node(0) == na
    b2 = h.read_field(a2, 2)
    assert [h.read_value(a2, 2), h.read_value(b2, 3)] == before == [NodeRef(nb), NodeRef(na)]
    assert m.objects_copied == 2 and m.bytes_copied == 32
    assert m.survival_ratio == pytest.approx(32 / 48)


def test_interior_root_keeps_displacement():
    h = cp()
    h.alloc(PAIR)
    a, na = h.alloc(Shape.of(6))
    h.set_root(0, a + 12)
    h.collect()
    assert h.root_node(0) == na
    assert h.root(0) - h.root_object(0) == 12


def test_breadth_first_order():
    h = cp()
    root, nr = h.alloc(PAIR)
    kid, nk = h.alloc(PAIR)
    grand, ng = h.alloc(PAIR)
    h.write_field(kid, 2, grand)
    h.write_field(root, 2, kid)
    h.set_root(0, root)
    h.collect()
    order = sorted(h.ghost.to_abs.items())
    assert [n for _, n in order] == [nr, nk, ng]


def test_self_pointer_copy_still_points_at_old_address_mid_collection():
    h = cp(check="off")
    a, na = h.alloc(PAIR)
    h.write_field(a, 2, a)
    h.write_field(a, 3, a)
    pre = h.heap.load(a - 4)
    h.set_root(0, a)
    mid = paused_collection(h, "forward", 1)
    c = mid.collector
    new = c.Ti + 4
    assert mid.heap.load(a) == new               # old header is the forwarding pointer
    assert mid.heap.load(new + 4) == a           # copied field still names the old object
    assert mid.heap.load(new - 4) == pre         # pre-header copied bit for bit
    assert check_gc_inv(mid).passed


def test_unreachable_never_copied():
    h = cp()
    keep, _ = h.alloc(Shape.of(5, [2]))
    for _ in range(6):
        h.alloc(PAIR)
    h.set_root(0, keep)
    m = h.collect()
    assert m.bytes_copied == 20
    assert h.collector.Fk - h.collector.Fi == 20


def test_swap_clears_old_start_bits():
    h = cp()
    for _ in range(5):
        h.alloc(PAIR)
    h.collect()
    c = h.collector
    assert h.heap.started_bases(c.Ti, c.Tl) == []
    assert c.Fi == h.mem_lo + 2048 and c.Fk == c.Fi
    assert check_mutator_inv(h).passed


def test_step_checks_pass_across_collections():
    h = cp(check="step", heap_bytes=1024)
    for i in range(120):
        p, _ = h.alloc(PAIR)
        if i and i % 2:
            h.write_field(p, 2, h.root_object(0))
        if i % 5 == 0:
            h.set_root(0, p)
    assert h.stats["collections"] > 0
    assert h.stats["rextend_checks"] > 0
