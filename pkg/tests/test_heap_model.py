import pytest

from gclab.abstract_graph import NodeRef, Prim, RegionMap
from gclab.errors import DanglingPointerError, HeapSafetyError, LayoutError
from gclab.heap_model import (BLACK, DENSE_TAG, GRAY, UNALLOC, WHITE, Descriptor,
                              DescriptorTable, HeapImage, decode_dense, dense_mask,
                              interior_to_base, value_decode)

LO, HI = 4096, 8192


@pytest.fixture
def heap():
    return HeapImage(LO, HI)


def test_store_load(heap):
    heap.store(LO, 7)
    assert heap.load(LO) == 7


def test_unaligned_and_out_of_range(heap):
    with pytest.raises(HeapSafetyError):
        heap.load(LO + 2)
    with pytest.raises(HeapSafetyError):
        heap.store(HI, 1)
    with pytest.raises(HeapSafetyError):
        heap.store(LO, 1 << 32)


def test_bad_bounds():
    with pytest.raises(HeapSafetyError):
        HeapImage(0, 64)
    with pytest.raises(HeapSafetyError):
        HeapImage(6, 64)


def test_colors(heap):
    assert heap.color_of(LO + 40) == UNALLOC
    heap.set_color(LO + 16, GRAY)
    assert heap.color_of(LO + 16) == 2
    heap.set_color(LO + 20, BLACK)
    heap.set_color(LO + 24, WHITE)
    assert heap.colored_bases() == {LO + 16: GRAY, LO + 20: BLACK, LO + 24: WHITE}
    assert heap.color_of(LO + 16) == GRAY  # neighbours do not bleed


def test_color_table_two_bits_per_word(heap):
    assert heap.color_table_nbytes * 8 == 2 * heap.nwords
    assert heap.color_table_nbytes / heap.nbytes == 0.0625


def test_start_bits(heap):
    heap.set_start_bit(LO + 8)
    heap.set_start_bit(LO + 64)
    assert heap.start_bit(LO + 8) and not heap.start_bit(LO + 12)
    assert heap.started_bases() == [LO + 8, LO + 64]
    heap.clear_start_range(LO, LO + 32)
    assert heap.started_bases() == [LO + 64]


def test_mask_bit_four_is_field_two():
    assert decode_dense(DENSE_TAG | 1 << 4, 3) == (False, False, True)


def test_zero_mask_all_primitive():
    assert decode_dense(0, 6) == (False,) * 6


def test_wide_object_mask():
    kinds = decode_dense(DENSE_TAG | 1 << 31, 34)
    assert kinds[29]
    assert not any(kinds[30:])
    assert sum(kinds) == 1


def test_dense_mask_rule_round_trip():
    kinds = (False, False, True, False, True) + (False,) * 24 + (True,)
    assert len(kinds) == 30
    m = dense_mask(kinds)
    assert m & 1 == DENSE_TAG
    assert m == DENSE_TAG | 1 << 4 | 1 << 6 | 1 << 31
    assert decode_dense(m, 30) == kinds
    with pytest.raises(LayoutError):
        dense_mask((False,) * 30 + (True,))


def test_descriptor_table():
    t = DescriptorTable(limit=LO)
    a = t.intern((False, False, True))
    assert t.intern((False, False, True)) == a
    b = t.intern((False, False, False, True))
    assert a != b and 0 < a < LO and 0 < b < LO
    assert t.layout(b) == (4, (False, False, False, True))
    assert t.size_of(a) == 12
    with pytest.raises(LayoutError):
        t.layout(999)
    t.register(50, Descriptor(2, 2, 3))
    with pytest.raises(LayoutError):
        t.layout(50)
    back = DescriptorTable.from_json(t.to_json(), LO)
    assert back.layout(a) == t.layout(a)


def test_interior_to_base(heap):
    t = DescriptorTable(LO)
    d = t.intern((False, False, True, True))
    b = LO + 64
    heap.store(b + 4, d)
    heap.set_color(b, WHITE)
    size_of = lambda p: t.size_of(heap.load(p))
    assert interior_to_base(heap, b + 4, size_of) == b + 4
    assert interior_to_base(heap, b + 16, size_of) == b + 4   # object end address
    with pytest.raises(DanglingPointerError):
        interior_to_base(heap, b + 20, size_of)
    with pytest.raises(DanglingPointerError):
        interior_to_base(heap, LO + 32, size_of)               # free space, nothing before


def test_interior_to_base_start_bits(heap):
    t = DescriptorTable(LO)
    d = t.intern((False, False, True))
    heap.store(LO + 4, d)
    heap.set_start_bit(LO)
    size_of = lambda p: t.size_of(heap.load(p))
    assert interior_to_base(heap, LO + 8, size_of, use_start_bits=True) == LO + 4


def test_value_decode():
    r = RegionMap({LO + 8: 7})
    assert value_decode(True, 0, r, LO, HI) == Prim(0)
    assert value_decode(True, LO + 12, r, LO, HI) == NodeRef(7)
    assert value_decode(False, 12345, r, LO, HI) == Prim(12345)
    assert value_decode(False, LO + 12, r, LO, HI) == Prim(LO + 12)
    with pytest.raises(DanglingPointerError):
        value_decode(True, LO + 40, r, LO, HI)


def test_snapshot_round_trip(heap):
    heap.store(LO + 8, 99)
    heap.set_color(LO + 4, BLACK)
    heap.set_start_bit(LO + 12)
    back = HeapImage.from_json(heap.to_json())
    assert back.content_hash() == heap.content_hash()
    back.store(LO, 1)
    assert back.content_hash() != heap.content_hash()
