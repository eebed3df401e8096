import pytest

from gclab.abstract_graph import (NO_ABS, NULL, AbstractHeap, NodeRef, Prim, ReachedRecord,
                                  RegionMap, duplicate_nodes, kinds_from_str, kinds_to_str,
                                  r_extend, well_formed)
from gclab.errors import ContractViolation

P, D = True, False


def test_fresh_node_zero_init():
    h = AbstractHeap()
    a = h.fresh_node(2, [D, D])
    assert a == 1
    assert [h.read(a, 0), h.read(a, 1)] == [Prim(0), Prim(0)]


def test_fresh_ids_distinct():
    h = AbstractHeap()
    assert h.fresh_node(2, [D, D]) != h.fresh_node(2, [D, D])


def test_pointer_field_starts_null():
    h = AbstractHeap()
    a = h.fresh_node(5, [D, D, P, P, D])
    assert h.read(a, 3) == Prim(0) == NULL


def test_header_fields_must_be_primitive():
    with pytest.raises(ContractViolation):
        AbstractHeap().fresh_node(3, [P, D, D])
    with pytest.raises(ContractViolation):
        AbstractHeap().fresh_node(1, [D])


def test_write_read_back():
    h = AbstractHeap()
    a1 = h.fresh_node(4, [D, D, P, D])
    a2 = h.fresh_node(4, [D, D, P, D])
    h.write(a1, 2, NodeRef(a2))
    assert h.read(a1, 2) == NodeRef(a2)


@pytest.mark.parametrize("field, value", [
    (2, Prim(5)),          # nonzero primitive into a pointer field
    (3, NodeRef(1)),       # node into a primitive field
    (1, Prim(0)),          # header is not writable
    (4, Prim(0)),          # out of range
    (2, NodeRef(99)),      # unknown node
])
def test_write_kind_errors(field, value):
    h = AbstractHeap()
    a = h.fresh_node(4, [D, D, P, D])
    with pytest.raises(ContractViolation):
        h.write(a, field, value)


def test_gc_range_allows_outside_primitives_in_pointer_fields():
    h = AbstractHeap(gc_range=(4096, 8192))
    a = h.fresh_node(3, [D, D, P])
    h.write(a, 2, Prim(12))
    with pytest.raises(ContractViolation):
        h.write(a, 2, Prim(5000))


def test_reachable_set_cases():
    h = AbstractHeap()
    assert h.reachable_set([]) == set()
    a, b, c, d = (h.fresh_node(4, [D, D, P, P]) for _ in range(4))
    h.write(a, 2, NodeRef(a))
    h.write(a, 3, NodeRef(a))
    assert h.reachable_set([a]) == {a}
    h.write(a, 2, NodeRef(b))
    h.write(b, 2, NodeRef(c))
    assert h.reachable_set([a]) == {a, b, c}
    assert d not in h.reachable_set([a, NO_ABS])


def test_well_formed():
    assert well_formed(RegionMap())
    assert well_formed(RegionMap({8: 1, 16: 2}))
    bad = RegionMap({8: 1, 16: 1})
    assert not well_formed(bad)
    assert duplicate_nodes(bad) == [(1, [8, 16])]


def test_region_map_no_abs_erases():
    r = RegionMap({8: 1})
    r[8] = NO_ABS
    assert 8 not in r and r[8] == NO_ABS and len(r) == 0


def test_r_extend():
    assert r_extend(RegionMap(), RegionMap({4: 9}))
    old = RegionMap({8: 1})
    assert r_extend(old, RegionMap({8: 1, 16: 2}))
    assert not r_extend(old, RegionMap({8: 2}))
    assert not r_extend(old, RegionMap())


def test_reached_record_epochs():
    rec = ReachedRecord()
    for _ in range(3):
        rec.advance()
    rec.record(7)
    assert rec.reached_since(7, 3)
    assert not rec.reached_since(7, 4)
    assert not rec.reached_since(8, 3)
    assert ReachedRecord.from_json(rec.to_json()).entries == rec.entries


def test_json_round_trip():
    h = AbstractHeap(gc_range=(4096, 8192))
    a = h.fresh_node(4, [D, D, P, D])
    h.write(a, 2, NodeRef(a))
    h.write(a, 3, Prim(77))
    back = AbstractHeap.from_json(h.to_json())
    assert back.read(a, 2) == NodeRef(a) and back.read(a, 3) == Prim(77)
    assert back.next_id == h.next_id
    assert kinds_from_str(kinds_to_str((D, D, P))) == (D, D, P)
