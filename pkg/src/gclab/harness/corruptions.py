"""Hand-crafted heap corruptions, each expected to trip one named predicate.

Every entry builds a small healthy heap, optionally pausing a collection
part-way through (snapshots between collector steps are legal checking
points), then damages exactly one thing.
``detect`` then runs the phase-appropriate checker on it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List

from ..abstract_graph import NO_ABS, NodeRef, Prim
from ..heap_model import BLACK, GRAY, UNALLOC, WHITE
from ..invariants import CheckReport, check_phase
from ..mutator import MutatorHandle, Shape, initialize


class _Pause(Exception):
    pass


class _PauseAt:
    """Observer wrapper that snapshots the heap at the k-th step of a kind."""

    def __init__(self, handle, kind: str, k: int):
        self.handle, self.kind, self.k = handle, kind, k
        self.seen = 0
        self.snapshot = None

    def collection_started(self, collector, roots):
        self.handle.collection_started(collector, roots)

    def collection_finished(self, collector, metrics):
        self.handle.collection_finished(collector, metrics)

    def step(self, collector, kind):
        if kind != self.kind:
            return
        self.seen += 1
        if self.seen == self.k:
            self.snapshot = self.handle.snapshot()
            raise _Pause()


def paused_collection(h: MutatorHandle, kind: str, k: int) -> MutatorHandle:
    """A fresh handle frozen just after the k-th ``kind`` step of a collection."""
    pause = _PauseAt(h, kind, k)
    h.collector.observer = pause
    try:
        h.collect()
    except _Pause:
        pass
    finally:
        h.collector.observer = h
    if pause.snapshot is None:
        raise RuntimeError(f"collection finished before {kind} step {k}")
    return MutatorHandle.from_snapshot(pause.snapshot)


PAIR = Shape.of(4, [2, 3])
MIXED = Shape.of(5, [2])


def world(collector: str) -> MutatorHandle:
    """Small heap: a rooted binary fan-out, a primitive-bearing object, garbage.

    Root 0 holds the tree top, root 1 holds the mixed object.  Objects
    allocated into ``h.garbage`` are dropped and never rooted.
    """
    h = initialize(collector=collector, heap_bytes=4096, mem_lo=4096, root_slots=4, check="off")
    nodes = [h.alloc(PAIR)[0] for _ in range(7)]
    for k in range(3):
        h.write_field(nodes[k], 2, nodes[2 * k + 1])
        h.write_field(nodes[k], 3, nodes[2 * k + 2])
    h.set_root(0, nodes[0])
    mixed = h.alloc(MIXED)[0]
    h.write_field(mixed, 2, nodes[6])
    h.write_field(mixed, 3, 12345)
    h.set_root(1, mixed)
    h.garbage = [h.alloc(PAIR)[0] for _ in range(3)]
    return h


def _base(h, slot: int) -> int:
    return h.root_object(slot) - 4


def _other_live(h, base: int) -> int:
    return next(a for a in sorted(h.ghost.to_abs.addresses()) if a != base)


# -- mark-sweep, mutator boundary ------------------------------------------------


def ms_after_gc() -> MutatorHandle:
    h = world("marksweep")
    h.collect()
    return h


def _dangling_field(h):
    freed = h.garbage[0]  # swept by the collection
    h.heap.store(_base(h, 0) + 8, freed)


def _wrong_node_field(h):
    top = _base(h, 0)
    h.heap.store(top + 8, h.heap.load(top + 12))


def _prim_field(h):
    h.heap.store(_base(h, 1) + 12, 54321)


def _preheader(h):
    h.heap.store(_base(h, 0), 0xDEAD)


def _header_descriptor(h):
    h.heap.store(_base(h, 0) + 4, h.heap.load(_base(h, 1) + 4))


def _gray_at_boundary(h):
    h.heap.set_color(_base(h, 0), GRAY)


def _mapped_unalloc(h):
    h.heap.set_color(_base(h, 1), UNALLOC)


def _overlapping_free_entries(h):
    c = h.collector
    e, size = c.free_list()[0]
    # a second entry starting inside the first one
    c.insert_free_entry(e + size - 16, 256)


def _free_list_cycle(h):
    c = h.collector
    last = c.free_list()[-1][0]
    h.heap.store(last, c.free_head)
    c.fn[last] = c.free_head


def _free_entry_on_live(h):
    c = h.collector
    c.insert_free_entry(_base(h, 1), 256)


def _duplicate_node(h):
    top = _base(h, 0)
    spare = h.collector.free_list()[0][0]
    size = h.collector.size_of(top + 4)
    h.heap.copy_words(top, spare, size)
    h.ghost.to_abs[spare] = h.ghost.to_abs[top]


def _dangling_root(h):
    h.roots[2] = h.garbage[1]


# -- mark-sweep, paused in the mark phase ----------------------------------------


def ms_mid_mark() -> MutatorHandle:
    h = world("marksweep")
    return paused_collection(h, "mark", 3)


def _black_to_white(h):
    heap, ghost = h.heap, h.ghost
    colors = heap.colored_bases()
    black = next(a for a, c in sorted(colors.items()) if c == BLACK)
    white = next(a for a, c in sorted(colors.items())
                 if c == WHITE and ghost.r1[a] != NO_ABS and a in h.ghost.to_abs)
    # keep the abstract graph consistent so only the color relation breaks
    heap.store(black + 8, white + 4)
    ghost.abs_heap.write(ghost.to_abs[black], 2, NodeRef(ghost.to_abs[white]))


def _gray_off_stack(h):
    c = h.collector
    if not c.mark_stack:
        raise RuntimeError("mark stack unexpectedly empty")
    c.mark_stack.pop()


def _black_outside_r2(h):
    heap, ghost = h.heap, h.ghost
    white = next(a for a, c in sorted(heap.colored_bases().items()) if c == WHITE)
    heap.set_color(white, BLACK)


# -- copying -----------------------------------------------------------------------


def copy_after_gc() -> MutatorHandle:
    h = world("copying")
    h.collect()
    return h


def copy_mid_scan() -> MutatorHandle:
    h = world("copying")
    return paused_collection(h, "scan", 2)


def _wrong_forwarding_target(h):
    c, heap, ghost = h.collector, h.heap, h.ghost
    fwd = [a for a in sorted(ghost.r1.addresses()) if c.is_forwarded(heap.load(a + 4))]
    a, b = fwd[0], fwd[1]
    heap.store(a + 4, heap.load(b + 4))


def _broken_space_bounds(h):
    c = h.collector
    c.Fk = c.Fl + 8


def _forwarded_at_mutator(h):
    c = h.collector
    h.heap.store(_base(h, 0) + 4, c.Ti + 4)


def _scanned_to_from_space(h):
    c, heap, ghost = h.collector, h.heap, h.ghost
    old = {node: a for a, node in ghost.r1.items()}
    for a in sorted(ghost.r2.addresses()):
        if a >= c.Tj:
            break
        n, kinds = h.descriptors.layout(heap.load(a + 4))
        for j in range(2, n):
            if kinds[j]:
                v = heap.load(a + 4 * j)
                heap.store(a + 4 * j, old[ghost.r2[v - 4]] + 4)
                return
    raise RuntimeError("no scanned pointer field")


def _stray_start_bit(h):
    h.heap.set_start_bit(_base(h, 0) + 8)


@dataclass
class Corruption:
    name: str
    predicate: str
    setup: Callable[[], MutatorHandle]
    damage: Callable[[MutatorHandle], None]

    def build(self) -> MutatorHandle:
        h = self.setup()
        self.damage(h)
        return h


CORRUPTIONS: List[Corruption] = [
    Corruption("dangling-field", "ObjInv", ms_after_gc, _dangling_field),
    Corruption("field-names-wrong-node", "ObjInv", ms_after_gc, _wrong_node_field),
    Corruption("primitive-field-changed", "ObjInv", ms_after_gc, _prim_field),
    Corruption("preheader-clobbered", "ObjInv", ms_after_gc, _preheader),
    Corruption("header-wrong-descriptor", "ObjInv", ms_after_gc, _header_descriptor),
    Corruption("gray-at-mutator-boundary", "ColorRange", ms_after_gc, _gray_at_boundary),
    Corruption("mapped-but-unalloc", "AllocColor", ms_after_gc, _mapped_unalloc),
    Corruption("overlapping-free-entries", "FreeList", ms_after_gc, _overlapping_free_entries),
    Corruption("free-list-cycle", "FreeList", ms_after_gc, _free_list_cycle),
    Corruption("free-entry-over-live-object", "FreeList", ms_after_gc, _free_entry_on_live),
    Corruption("node-mapped-twice", "WellFormed", ms_after_gc, _duplicate_node),
    Corruption("dangling-root", "Roots", ms_after_gc, _dangling_root),
    Corruption("black-to-white-edge", "TriColor", ms_mid_mark, _black_to_white),
    Corruption("gray-missing-from-stack", "MarkStack", ms_mid_mark, _gray_off_stack),
    Corruption("black-outside-r2", "RegionColor", ms_mid_mark, _black_outside_r2),
    Corruption("wrong-forwarding-target", "Forwarding", copy_mid_scan, _wrong_forwarding_target),
    Corruption("broken-space-bounds", "SpaceBounds", copy_after_gc, _broken_space_bounds),
    Corruption("forwarded-at-mutator-boundary", "Forwarding", copy_after_gc, _forwarded_at_mutator),
    Corruption("scanned-field-to-from-space", "ThreeZone", copy_mid_scan, _scanned_to_from_space),
    Corruption("stray-start-bit", "StartBits", copy_after_gc, _stray_start_bit),
]

BY_NAME: Dict[str, Corruption] = {c.name: c for c in CORRUPTIONS}


def detect(c: Corruption) -> CheckReport:
    return check_phase(c.build())


def healthy_baselines() -> Dict[str, CheckReport]:
    """Checker output on each undamaged setup (all must pass)."""
    return {f.__name__: check_phase(f()) for f in (ms_after_gc, ms_mid_mark,
                                                    copy_after_gc, copy_mid_scan)}
