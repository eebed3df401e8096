"""Simulated 32-bit word heap with byte addressing.

Object layout (byte offsets from the object base ``b``)::

    b + 0      pre-header (primitive, preserved but never interpreted)
    b + 4      header: descriptor id   <- canonical object pointer
    b + 4*j    field j, 2 <= j < numFields

The color table keeps two bits per heap word; only an object's base word is
ever colored.  The start-bit vector keeps one bit per heap word and is used
by the copying collector in place of colors.
"""

from __future__ import annotations

import hashlib
from array import array
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from .abstract_graph import NO_ABS, NodeRef, Prim, RegionMap
from .errors import DanglingPointerError, HeapSafetyError, LayoutError

WORD_MASK = 0xFFFFFFFF
UNALLOC, WHITE, GRAY, BLACK = 0, 1, 2, 3
COLOR_NAMES = {UNALLOC: "Unalloc", WHITE: "White", GRAY: "Gray", BLACK: "Black"}

DEFAULT_MEM_LO = 4096
COLOR_BITS_PER_WORD = 2

DENSE_TAG = 1
TAG_MASK = 15
# fields at or beyond this index cannot be described by a dense mask
DENSE_MAX_FIELD = 30

_WORD_TYPECODE = next(t for t in "IL" if array(t).itemsize == 4)


def is_word(v: int) -> bool:
    return 0 <= v <= WORD_MASK


class HeapImage:
    """Flat word array over [mem_lo, mem_hi) plus color table and start bits."""

    def __init__(self, mem_lo: int, mem_hi: int):
        if not 0 < mem_lo <= mem_hi:
            raise HeapSafetyError(f"need 0 < mem_lo <= mem_hi, got {mem_lo}, {mem_hi}")
        if mem_lo & 3 or mem_hi & 3:
            raise HeapSafetyError("heap bounds must be 4-byte aligned")
        if mem_hi > WORD_MASK:
            raise HeapSafetyError("heap must fit in a 32-bit address space")
        self.mem_lo = mem_lo
        self.mem_hi = mem_hi
        self.nwords = (mem_hi - mem_lo) >> 2
        self.words = array(_WORD_TYPECODE, bytes(4 * self.nwords))
        self.colors = bytearray((self.nwords + 3) // 4)
        self.start_bits = bytearray((self.nwords + 7) // 8)

    @property
    def nbytes(self) -> int:
        return self.mem_hi - self.mem_lo

    @property
    def color_table_nbytes(self) -> int:
        return len(self.colors)

    def index(self, a: int) -> int:
        if a & 3:
            raise HeapSafetyError(f"unaligned heap address {a:#x}")
        if not self.mem_lo <= a < self.mem_hi:
            raise HeapSafetyError(f"heap address {a:#x} outside [{self.mem_lo:#x}, {self.mem_hi:#x})")
        return (a - self.mem_lo) >> 2

    def in_heap(self, a: int) -> bool:
        return self.mem_lo <= a < self.mem_hi and not a & 3

    # -- words ----------------------------------------------------------------

    def load(self, a: int) -> int:
        if a & 3 or not self.mem_lo <= a < self.mem_hi:
            self.index(a)
        return self.words[(a - self.mem_lo) >> 2]

    def store(self, a: int, v: int) -> None:
        if a & 3 or not self.mem_lo <= a < self.mem_hi:
            self.index(a)
        if not 0 <= v <= WORD_MASK:
            raise HeapSafetyError(f"value {v} is not a 32-bit word")
        self.words[(a - self.mem_lo) >> 2] = v

    def zero_range(self, lo: int, hi: int) -> None:
        i, j = self._span(lo, hi)
        self.words[i:j] = array(_WORD_TYPECODE, bytes(4 * (j - i)))

    def copy_words(self, src: int, dst: int, nbytes: int) -> None:
        i, j = self._span(src, src + nbytes)
        k, _ = self._span(dst, dst + nbytes)
        self.words[k:k + (j - i)] = self.words[i:j]

    def _span(self, lo: int, hi: int) -> Tuple[int, int]:
        if lo & 3 or hi & 3 or not self.mem_lo <= lo <= hi <= self.mem_hi:
            raise HeapSafetyError(f"bad heap range [{lo:#x}, {hi:#x})")
        return (lo - self.mem_lo) >> 2, (hi - self.mem_lo) >> 2

    # -- colors ---------------------------------------------------------------

    def color_of(self, a: int) -> int:
        if a & 3 or not self.mem_lo <= a < self.mem_hi:
            self.index(a)
        i = (a - self.mem_lo) >> 2
        return (self.colors[i >> 2] >> ((i & 3) << 1)) & 3

    def set_color(self, a: int, c: int) -> None:
        if a & 3 or not self.mem_lo <= a < self.mem_hi:
            self.index(a)
        if not 0 <= c < 4:
            raise HeapSafetyError(f"bad color {c}")
        i = (a - self.mem_lo) >> 2
        b = i >> 2
        sh = (i & 3) << 1
        self.colors[b] = (self.colors[b] & (0xFF ^ (3 << sh))) | (c << sh)

    def colored_bases(self) -> Dict[int, int]:
        """Every address whose color entry is not Unalloc, with its color."""
        out = {}
        lo = self.mem_lo
        for bi, byte in enumerate(self.colors):
            if byte:
                for k in range(4):
                    c = (byte >> (k << 1)) & 3
                    if c:
                        out[lo + ((bi * 4 + k) << 2)] = c
        return out

    # -- start bits -----------------------------------------------------------

    def start_bit(self, a: int) -> bool:
        i = self.index(a)
        return bool(self.start_bits[i >> 3] >> (i & 7) & 1)

    def set_start_bit(self, a: int) -> None:
        i = self.index(a)
        self.start_bits[i >> 3] |= 1 << (i & 7)

    def clear_start_bit(self, a: int) -> None:
        i = self.index(a)
        self.start_bits[i >> 3] &= 0xFF ^ (1 << (i & 7))

    def clear_start_range(self, lo: int, hi: int) -> None:
        i, j = self._span(lo, hi)
        bits = self.start_bits
        while i < j and i & 7:
            bits[i >> 3] &= 0xFF ^ (1 << (i & 7))
            i += 1
        while i + 8 <= j:
            bits[i >> 3] = 0
            i += 8
        while i < j:
            bits[i >> 3] &= 0xFF ^ (1 << (i & 7))
            i += 1

    def started_bases(self, lo: Optional[int] = None, hi: Optional[int] = None) -> List[int]:
        lo = self.mem_lo if lo is None else lo
        hi = self.mem_hi if hi is None else hi
        out = []
        base = self.mem_lo
        for bi, byte in enumerate(self.start_bits):
            if byte:
                for k in range(8):
                    if byte >> k & 1:
                        a = base + ((bi * 8 + k) << 2)
                        if lo <= a < hi:
                            out.append(a)
        return out

    # -- snapshots ------------------------------------------------------------

    def copy(self) -> "HeapImage":
        h = HeapImage.__new__(HeapImage)
        h.mem_lo, h.mem_hi, h.nwords = self.mem_lo, self.mem_hi, self.nwords
        h.words = array(_WORD_TYPECODE, self.words)
        h.colors = bytearray(self.colors)
        h.start_bits = bytearray(self.start_bits)
        return h

    def content_hash(self) -> str:
        m = hashlib.sha256()
        m.update(self.words.tobytes())
        m.update(bytes(self.colors))
        m.update(bytes(self.start_bits))
        return m.hexdigest()

    def to_json(self) -> dict:
        return {
            "mem_lo": self.mem_lo,
            "mem_hi": self.mem_hi,
            "words": "".join(f"{w:08x}" for w in self.words),
            "colors": _rle([self.color_of(self.mem_lo + 4 * i) for i in range(self.nwords)]),
            "start_bits": _rle([self.start_bits[i >> 3] >> (i & 7) & 1 for i in range(self.nwords)]),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "HeapImage":
        h = cls(int(obj["mem_lo"]), int(obj["mem_hi"]))
        hx = obj["words"]
        if len(hx) != 8 * h.nwords:
            raise HeapSafetyError("snapshot word count does not match bounds")
        for i in range(h.nwords):
            h.words[i] = int(hx[8 * i:8 * i + 8], 16)
        for i, c in enumerate(_unrle(obj["colors"], h.nwords)):
            if c:
                h.set_color(h.mem_lo + 4 * i, c)
        for i, b in enumerate(_unrle(obj["start_bits"], h.nwords)):
            if b:
                h.start_bits[i >> 3] |= 1 << (i & 7)
        return h


def _rle(values: Sequence[int]) -> List[List[int]]:
    out: List[List[int]] = []
    for v in values:
        if out and out[-1][0] == v:
            out[-1][1] += 1
        else:
            out.append([v, 1])
    return out


def _unrle(runs, n: int) -> List[int]:
    out = []
    for v, count in runs:
        out.extend([int(v)] * int(count))
    if len(out) != n:
        raise HeapSafetyError("run-length data does not cover the heap")
    return out


# -- descriptors ------------------------------------------------------------------


@dataclass(frozen=True)
class Descriptor:
    tag: int
    mask: int
    num_fields: int


def dense_mask(kinds: Sequence[bool]) -> int:
    mask = DENSE_TAG
    for j in range(2, len(kinds)):
        if kinds[j]:
            if j >= DENSE_MAX_FIELD:
                raise LayoutError(f"field {j} cannot be a pointer in the dense format")
            mask |= 1 << (2 + j)
    return mask


def decode_dense(mask: int, num_fields: int) -> Tuple[bool, ...]:
    """Field j >= 2 is a pointer iff j < 30 and bit (2 + j) of the mask is set."""
    return (False, False) + tuple(
        j < DENSE_MAX_FIELD and (mask >> (2 + j)) & 1 == 1 for j in range(2, num_fields))


class DescriptorTable:
    """Read-only descriptor registry living outside GC space.

    Ids are small integers below ``limit`` (the heap's ``mem_lo``), so a
    header word can never be mistaken for a heap address.
    """

    def __init__(self, limit: int = DEFAULT_MEM_LO):
        self.limit = limit
        self.descs: Dict[int, Descriptor] = {}
        self._by_shape: Dict[Tuple[bool, ...], int] = {}
        self._layouts: Dict[int, Tuple[int, Tuple[bool, ...]]] = {}

    def intern(self, kinds: Sequence[bool]) -> int:
        kinds = tuple(bool(k) for k in kinds)
        did = self._by_shape.get(kinds)
        if did is not None:
            return did
        if len(kinds) < 2 or kinds[0] or kinds[1]:
            raise LayoutError("shape needs primitive pre-header and header")
        did = len(self.descs) + 1
        if did >= self.limit:
            raise LayoutError("descriptor table full")
        self.descs[did] = Descriptor(DENSE_TAG, dense_mask(kinds), len(kinds))
        self._by_shape[kinds] = did
        return did

    def register(self, did: int, desc: Descriptor) -> None:
        if not 0 < did < self.limit or did in self.descs:
            raise LayoutError(f"cannot register descriptor id {did}")
        self.descs[did] = desc

    def layout(self, header: int) -> Tuple[int, Tuple[bool, ...]]:
        """Decode (numFields, fieldKinds) from a header word."""
        hit = self._layouts.get(header)
        if hit is not None:
            return hit
        desc = self.descs.get(header)
        if desc is None:
            raise LayoutError(f"header {header:#x} is not a registered descriptor")
        if desc.tag != DENSE_TAG or desc.mask & TAG_MASK != DENSE_TAG:
            raise LayoutError(f"descriptor {header} has unsupported tag {desc.tag}")
        out = (desc.num_fields, decode_dense(desc.mask, desc.num_fields))
        self._layouts[header] = out
        return out

    def size_of(self, header: int) -> int:
        return 4 * self.layout(header)[0]

    def to_json(self) -> dict:
        return {str(k): [d.tag, d.mask, d.num_fields] for k, d in self.descs.items()}

    @classmethod
    def from_json(cls, obj: dict, limit: int) -> "DescriptorTable":
        t = cls(limit)
        for k, (tag, mask, n) in sorted(obj.items(), key=lambda kv: int(kv[0])):
            desc = Descriptor(int(tag), int(mask), int(n))
            t.descs[int(k)] = desc
            t._by_shape.setdefault(decode_dense(desc.mask, desc.num_fields), int(k))
        return t


def object_layout(table: DescriptorTable, header: int) -> Tuple[int, Tuple[bool, ...]]:
    return table.layout(header)


def preheader_hash(node: int) -> int:
    """Pre-header value stamped at allocation; only the checker ever reads it."""
    return (node * 2654435761) & WORD_MASK


# -- value correspondence ---------------------------------------------------------


def gc_addr_ex(v: int, mem_lo: int, mem_hi: int) -> bool:
    """GC space extended by one word at the top (object-end addresses)."""
    return mem_lo <= v <= mem_hi


def value_decode(is_ptr: bool, v: int, r: RegionMap, mem_lo: int, mem_hi: int):
    """Abstract meaning of word ``v`` held in a field of the given kind."""
    if not 0 <= v <= WORD_MASK:
        raise HeapSafetyError(f"value {v} is not a 32-bit word")
    if is_ptr and mem_lo <= v <= mem_hi:
        node = r.map.get(v - 4, NO_ABS)
        if node == NO_ABS:
            raise DanglingPointerError(f"pointer {v:#x} does not address a live object")
        return NodeRef(node)
    return Prim(v)


def interior_to_base(heap: HeapImage, a: int, size_of, use_start_bits: bool = False,
                     lo: Optional[int] = None) -> int:
    """Canonical pointer of the object containing interior address ``a``.

    ``a`` may range from the header word up to and including the object's end
    address.  The search walks backwards from ``a - 4`` over the color table
    (or start bits) and stops at ``lo`` (default ``mem_lo``).  ``size_of``
    maps a canonical pointer to the object's size in bytes.
    """
    lo = heap.mem_lo if lo is None else lo
    if a & 3 or not heap.mem_lo < a <= heap.mem_hi:
        raise DanglingPointerError(f"interior pointer {a:#x} is not an aligned GC address")
    p = a - 4
    if use_start_bits:
        bits = heap.start_bits
        mlo = heap.mem_lo
        while p >= lo:
            i = (p - mlo) >> 2
            if bits[i >> 3] >> (i & 7) & 1:
                break
            p -= 4
    else:
        colors = heap.colors
        mlo = heap.mem_lo
        while p >= lo:
            i = (p - mlo) >> 2
            if (colors[i >> 2] >> ((i & 3) << 1)) & 3:
                break
            p -= 4
    if p < lo:
        raise DanglingPointerError(f"no object precedes interior pointer {a:#x}")
    base = p
    if a > base + size_of(base + 4):
        raise DanglingPointerError(f"interior pointer {a:#x} lies past the object at {base:#x}")
    return base + 4
