import pytest

from gclab.errors import CollectorFault, OutOfMemory
from gclab.heap_model import BLACK, GRAY, UNALLOC, WHITE
from gclab.invariants import check_conservation, check_free_list, check_mutator_inv
from gclab.marksweep import (LARGE_OBJECT, MAX_CACHE_SIZE, MIN_CACHE_SIZE, MIN_FREE_ENTRY,
                             MarkSweepMetrics)
from gclab.mutator import Shape, initialize

PAIR = Shape.of(4, [2, 3])


def ms(**kw):
    kw.setdefault("collector", "marksweep")
    kw.setdefault("heap_bytes", 8192)
    kw.setdefault("check", "gc")
    return initialize(**kw)


def test_constants():
    assert (MIN_CACHE_SIZE, LARGE_OBJECT, MIN_FREE_ENTRY, MAX_CACHE_SIZE) == (256, 192, 8, 4096)


def test_fresh_heap_single_entry_below_wilderness():
    h = ms()
    c = h.collector
    assert c.wild_lo == h.mem_hi - 8192 // 16
    assert c.free_list() == [(h.mem_lo, c.wild_lo - h.mem_lo)]
    assert check_free_list(h).passed


def test_cache_bump_formula():
    h = ms(mem_lo=512, check="off")
    c = h.collector
    c.cache_ptr, c.cache_size = 1000, 64
    ptr, _ = h.alloc(PAIR)          # 16 bytes
    assert ptr - 4 == 1048
    assert c.cache_size == 48


def test_refill_takes_high_end_of_first_chunk():
    h = ms()
    c = h.collector
    chunk, size = c.free_list()[0]
    ptr, _ = h.alloc(PAIR)
    assert c.cache_ptr == chunk + size - MAX_CACHE_SIZE
    assert ptr - 4 == chunk + size - 16
    assert c.free_list() == [(chunk, size - MAX_CACHE_SIZE)]


def test_size_192_takes_large_path():
    h = ms()
    c = h.collector
    ptr, _ = h.alloc(Shape.of(48))
    assert c.cache_size == 0        # the cache was never touched
    assert ptr - 4 == c.wild_lo - 192
    small, _ = h.alloc(Shape.of(47))
    assert c.cache_size > 0 and small != ptr


def test_chunk_remainder_below_min_cache_is_unlinked():
    h = ms(check="off")
    c = h.collector
    c.free_head, c.fs, c.fn = 0, {}, {}
    c.insert_free_entry(h.mem_lo, 200)
    ptr, _ = h.alloc(Shape.of(48))
    assert ptr - 4 == h.mem_lo + 8
    assert c.free_list() == []


def test_remainder_at_least_min_cache_shrinks_chunk():
    h = ms(check="off")
    c = h.collector
    c.free_head, c.fs, c.fn = 0, {}, {}
    c.insert_free_entry(h.mem_lo, 192 + 256)
    h.alloc(Shape.of(48))
    assert c.free_list() == [(h.mem_lo, 256)]


def test_no_roots_frees_everything():
    h = ms()
    for _ in range(10):
        h.alloc(PAIR)
    m = h.collect()
    assert h.heap.colored_bases() == {}
    assert h.live_nodes() == set()
    assert m.live_bytes == 0 and m.freed_bytes == 160
    assert h.collector.free_list() == [(h.mem_lo, h.collector.wild_lo - h.mem_lo)]


def test_two_node_cycle_survives():
    h = ms()
    a, na = h.alloc(PAIR)
    b, nb = h.alloc(PAIR)
    h.write_field(a, 2, b)
    h.write_field(b, 2, a)
    h.set_root(0, a)
    m = h.collect()
    assert h.live_nodes() == {na, nb}
    assert m.live_objects == 2
    assert h.read_field(b, 2) == a           # non-moving


def test_mark_only_state():
    h = ms(check="off")
    a, _ = h.alloc(PAIR)
    b, _ = h.alloc(PAIR)
    h.alloc(PAIR)
    h.write_field(a, 3, b)
    h.set_root(0, a)
    g = h.ghost
    epoch = g.reached.advance()
    from gclab.abstract_graph import RegionMap
    g.r1, g.r2 = g.to_abs.copy(), RegionMap()
    h.collector.mark_phase(h.roots, MarkSweepMetrics(epoch=epoch))
    colors = h.heap.colored_bases()
    assert sorted(c for c in colors.values()) == [WHITE, BLACK, BLACK]
    assert GRAY not in colors.values()
    assert set(g.r2.addresses()) == {a - 4, b - 4}


def test_small_gap_is_not_listed():
    h = ms()
    a, _ = h.alloc(PAIR)
    dead, _ = h.alloc(Shape.of(32))          # 128 bytes
    c_, _ = h.alloc(PAIR)
    h.set_root(0, a)
    h.set_root(1, c_)
    m = h.collect()
    starts = [e for e, _ in h.collector.free_list()]
    assert dead - 4 not in starts
    assert all(not (e <= dead - 4 < e + s) for e, s in h.collector.free_list())
    assert m.fragment_bytes >= 128
    assert h.heap.color_of(dead - 4) == UNALLOC
    assert check_conservation(h, m).passed


def test_conservation_identity():
    h = ms()
    keep = []
    for i in range(40):
        p, _ = h.alloc(Shape.of(4 + i % 9, [2]))
        if i % 3 == 0:
            keep.append(p)
    for i, p in enumerate(keep[:8]):
        h.set_root(i, p)
    m = h.collect()
    assert m.live_bytes + m.free_list_bytes + m.fragment_bytes + m.cache_bytes == m.heap_bytes
    assert m.occupancy_pct == pytest.approx(100.0 * m.live_bytes / m.heap_bytes)


def test_collect_twice_is_idempotent_on_live_set():
    h = ms()
    a, _ = h.alloc(PAIR)
    b, _ = h.alloc(PAIR)
    h.alloc(PAIR)
    h.write_field(a, 2, b)
    h.set_root(0, a)
    h.collect()
    first = h.live_nodes()
    h.collect()
    assert h.live_nodes() == first


def test_interior_root_keeps_object():
    h = ms()
    a, na = h.alloc(PAIR)
    h.set_root(0, a + 8)                     # points at field 3
    h.collect()
    assert h.live_nodes() == {na}
    assert h.root(0) == a + 8


def test_wilderness_used_after_gc_for_large_objects():
    h = ms(heap_bytes=4096)
    c = h.collector
    big = Shape.of(64)                       # 256 bytes
    slot = 0
    # fill the main area with rooted big objects
    while True:
        hit = c._first_fit(256)
        if hit is None:
            break
        p, _ = h.alloc(big)
        h.set_root(slot, p)
        slot += 1
    p, _ = h.alloc(big)
    assert p - 4 >= c.wild_lo
    assert check_mutator_inv(h).passed


def test_out_of_memory_when_all_live():
    h = ms(heap_bytes=2048, root_slots=64)
    with pytest.raises(OutOfMemory):
        for i in range(64):
            p, _ = h.alloc(Shape.of(16))
            h.set_root(i, p)
    # the failed request left no trace in the abstract graph
    assert len(h.ghost.abs_heap) == len(h.live_nodes())


def test_bounded_mark_stack_overflow():
    h = ms(mark_stack_limit=2, check="off")
    nodes = [h.alloc(Shape.of(6, [2, 3, 4, 5]))[0] for _ in range(5)]
    for j, n in enumerate(nodes[1:], start=2):
        h.write_field(nodes[0], j, n)
    h.set_root(0, nodes[0])
    with pytest.raises(CollectorFault):
        h.collect()
