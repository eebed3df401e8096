"""Executable invariant library over (heap image, ghost state) snapshots.

Every check is a pure function of a handle-like object exposing ``heap``,
``descriptors``, ``ghost``, ``collector`` and ``roots``; it never mutates the
snapshot and reports violations instead of raising.  Predicate names are
stable strings so fault-injection tests can assert which check fired:

    WellFormed ObjectBounds Overlap ObjInv ColorRange AllocColor RegionColor
    TriColor MarkStack FreeList FreeListPolicy Cache Roots SpaceBounds
    CopyRegion Forwarding ThreeZone StartBits Effectiveness Conservation
    Survival RExtend
"""

from __future__ import annotations

import bisect
import json
from dataclasses import dataclass, field
from typing import Any, List, Optional

from .abstract_graph import NO_ABS, NodeRef, RegionMap, duplicate_nodes
from .errors import GCLabError
from .heap_model import BLACK, COLOR_NAMES, GRAY, UNALLOC, WHITE, preheader_hash

MAX_VIOLATIONS = 64
MIN_FREE_ENTRY = 8
MIN_CACHE_SIZE = 256


@dataclass
class Violation:
    predicate: str
    location: Any
    detail: str

    def to_json(self) -> dict:
        loc = self.location
        if isinstance(loc, int):
            loc = f"{loc:#x}"
        return {"predicate": self.predicate, "location": loc, "detail": self.detail}


@dataclass
class CheckReport:
    violations: List[Violation] = field(default_factory=list)
    truncated: bool = False

    @property
    def passed(self) -> bool:
        return not self.violations

    def add(self, predicate: str, location, detail: str) -> None:
        if len(self.violations) < MAX_VIOLATIONS:
            self.violations.append(Violation(predicate, location, detail))
        else:
            self.truncated = True

    def merge(self, other: "CheckReport") -> "CheckReport":
        for v in other.violations:
            self.add(v.predicate, v.location, v.detail)
        self.truncated |= other.truncated
        return self

    def predicates(self) -> set:
        return {v.predicate for v in self.violations}

    def first(self) -> Optional[Violation]:
        return self.violations[0] if self.violations else None

    def to_json(self) -> dict:
        return {"passed": self.passed, "truncated": self.truncated,
                "violations": [v.to_json() for v in self.violations]}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


# -- shared pieces --------------------------------------------------------------


def _well_formed(h, rep: CheckReport) -> None:
    for node, addrs in duplicate_nodes(h.ghost.to_abs):
        rep.add("WellFormed", addrs[1], f"node {node} mapped from {[hex(a) for a in addrs]}")


def _extents(h, region: RegionMap, rep: CheckReport):
    """Sorted (base, end, node) of a region, sized by the abstract shapes."""
    absh = h.ghost.abs_heap
    lo, hi = h.heap.mem_lo, h.heap.mem_hi
    out = []
    for a, node in region.items():
        n = absh.nodes.get(node)
        if n is None:
            rep.add("WellFormed", a, f"maps to unknown abstract node {node}")
            continue
        e = a + 4 * len(n.kinds)
        if a & 3 or a < lo or e > hi:
            rep.add("ObjectBounds", a, f"object [{a:#x}, {e:#x}) leaves GC space")
            continue
        out.append((a, e, node))
    out.sort()
    prev = None
    for a, e, node in out:
        if prev is not None and a < prev[1]:
            rep.add("Overlap", a, f"object overlaps the one at {prev[0]:#x}")
        if prev is None or e > prev[1]:
            prev = (a, e)
    return out


def check_obj_inv(h, i: int, rs: RegionMap, rt: RegionMap, rep: Optional[CheckReport] = None,
                  predicate: str = "ObjInv", alt: Optional[RegionMap] = None) -> CheckReport:
    """ObjInv(i, rs, rt): object i is laid out per its node and fields decode under rt.

    ``alt`` is a second target region tried when a pointer does not decode
    under ``rt`` (used for a partially scanned queue head).
    """
    rep = CheckReport() if rep is None else rep
    if rs[i] == NO_ABS:
        return rep
    heap = h.heap
    node = h.ghost.to_abs[i]
    if node == NO_ABS:
        rep.add(predicate, i, f"region maps {i:#x} but $toAbs does not")
        return rep
    an = h.ghost.abs_heap.nodes.get(node)
    if an is None:
        rep.add(predicate, i, f"unknown abstract node {node}")
        return rep
    kinds, values = an.kinds, an.values
    n = len(kinds)
    if not heap.in_heap(i) or i + 4 * n > heap.mem_hi:
        rep.add(predicate, i, "object extends outside GC space")
        return rep
    try:
        lay = h.descriptors.layout(heap.load(i + 4))
    except GCLabError as e:
        rep.add(predicate, i, f"header: {e}")
        return rep
    if lay != (n, kinds):
        rep.add(predicate, i, f"header describes {lay[0]} fields, node {node} has {n}")
        return rep
    if heap.load(i) != preheader_hash(node):
        rep.add(predicate, i, "pre-header word changed")
    lo, hi = heap.mem_lo, heap.mem_hi
    words = heap.words
    base_ix = (i - lo) >> 2
    rtm = rt.map
    for j in range(2, n):
        w = words[base_ix + j]
        want = values[j]
        if kinds[j] and lo <= w <= hi:
            got = rtm.get(w - 4)
            if got is None and alt is not None:
                got = alt.map.get(w - 4)
            if got is None:
                rep.add(predicate, i, f"field {j} holds dangling pointer {w:#x}")
            elif type(want) is not NodeRef or want.node != got:
                rep.add(predicate, i, f"field {j} points to node {got}, abstract value {want}")
        elif type(want) is NodeRef or want.value != w:
            rep.add(predicate, i, f"field {j} holds {w:#x}, abstract value {want}")
    return rep


def _check_roots(h, rep: CheckReport) -> None:
    for slot, v in enumerate(h.roots):
        if not v:
            continue
        try:
            p = h.collector.resolve(v)
        except GCLabError as e:
            rep.add("Roots", slot, f"root {v:#x} does not resolve: {e}")
            continue
        if h.ghost.to_abs[p - 4] == NO_ABS:
            rep.add("Roots", slot, f"root {v:#x} resolves to unmapped base {p - 4:#x}")


# -- mark-sweep -----------------------------------------------------------------


def check_free_list(h, objects=None) -> CheckReport:
    """Address-ordered free list: bounds, linkage, ghost agreement, disjointness."""
    rep = CheckReport()
    c, heap = h.collector, h.heap
    lo, hi = heap.mem_lo, heap.mem_hi
    fs, fn = c.fs, c.fn
    to_abs = h.ghost.to_abs
    if objects is None:
        objects = _extents(h, to_abs, CheckReport())
    starts = [o[0] for o in objects]
    colored = sorted(heap.colored_bases())
    order = []
    seen = set()
    e = c.free_head
    while e:
        if e in seen:
            rep.add("FreeList", e, "free list is cyclic")
            break
        if e & 3 or not lo <= e < hi - 4:
            rep.add("FreeList", e, "entry address outside GC space")
            break
        seen.add(e)
        order.append(e)
        size, nxt = fs.get(e, 0), fn.get(e, 0)
        if not size:
            rep.add("FreeList", e, "linked entry has no ghost size")
        if heap.load(e) != nxt or heap.load(e + 4) != size:
            rep.add("FreeList", e, f"entry words ({heap.load(e):#x}, {heap.load(e + 4)}) "
                                   f"disagree with ghost ({nxt:#x}, {size})")
        end = e + size
        if size < MIN_FREE_ENTRY or end > hi or size & 3:
            rep.add("FreeList", e, f"entry size {size} violates i + 8 <= i + size <= memHi")
        elif size < MIN_CACHE_SIZE:
            rep.add("FreeListPolicy", e, f"entry of {size} bytes is below the minimum cache size")
        if to_abs[e] != NO_ABS:
            rep.add("FreeList", e, "entry address is mapped to an abstract node")
        k = bisect.bisect_left(starts, end)
        if k and objects[k - 1][1] > e:
            rep.add("FreeList", e, f"entry overlaps object at {objects[k - 1][0]:#x}")
        k = bisect.bisect_left(colored, e)
        if k < len(colored) and colored[k] < end:
            rep.add("FreeList", e, f"colored base {colored[k]:#x} inside entry")
        if nxt:
            if not end < nxt <= hi:
                rep.add("FreeList", e, f"next {nxt:#x} violates i + size < next <= memHi")
            if nxt not in fs:
                rep.add("FreeList", e, f"next {nxt:#x} is not an entry")
        e = nxt
    for k in fs:
        if k not in seen:
            rep.add("FreeList", k, "ghost entry not reachable from the list head")
    if order != sorted(fs):
        rep.add("FreeList", c.free_head, "entries are not linked in address order without gaps")
    return rep


def _check_cache(h, objects, rep: CheckReport) -> None:
    c, heap = h.collector, h.heap
    if not c.cache_size:
        return
    a, e = c.cache_ptr, c.cache_ptr + c.cache_size
    if a & 3 or e & 3 or a < heap.mem_lo or e > c.wild_lo:
        rep.add("Cache", a, f"cache [{a:#x}, {e:#x}) outside the main area")
        return
    for b, be, _ in objects:
        if b < e and a < be:
            rep.add("Cache", a, f"cache overlaps object at {b:#x}")
            break
    for f, size in c.fs.items():
        if f < e and a < f + size:
            rep.add("Cache", a, f"cache overlaps free entry at {f:#x}")
            break


def check_mutator_inv_ms(h) -> CheckReport:
    rep = CheckReport()
    _well_formed(h, rep)
    to_abs = h.ghost.to_abs
    colored = h.heap.colored_bases()
    for a, col in colored.items():
        if col not in (UNALLOC, WHITE):
            rep.add("ColorRange", a, f"{COLOR_NAMES[col]} at a mutator boundary")
        if a not in to_abs:
            rep.add("AllocColor", a, f"{COLOR_NAMES[col]} but $toAbs is NO_ABS")
    for a in to_abs.addresses():
        if a not in colored:
            rep.add("AllocColor", a, "mapped but Unalloc")
    objects = _extents(h, to_abs, rep)
    for a, _, _ in objects:
        check_obj_inv(h, a, to_abs, to_abs, rep)
    _check_roots(h, rep)
    rep.merge(check_free_list(h, objects))
    _check_cache(h, objects, rep)
    return rep


def check_gc_inv_ms(h) -> CheckReport:
    rep = CheckReport()
    ghost, heap, c = h.ghost, h.heap, h.collector
    _well_formed(h, rep)
    to_abs = ghost.to_abs
    r1 = ghost.r1 if ghost.r1 is not None else to_abs
    r2 = ghost.r2 if ghost.r2 is not None else RegionMap()
    phase = c.phase
    sp = c.sweep_ptr if phase == "sweep" else None
    lo, hi = heap.mem_lo, heap.mem_hi
    colored = heap.colored_bases()
    for a in to_abs.addresses():
        if a not in colored:
            rep.add("AllocColor", a, "mapped but Unalloc")
    for a, node in r2.items():
        if r1[a] != node:
            rep.add("RegionColor", a, f"$r2 maps node {node}, $r1 maps {r1[a]}")
        if a not in colored:
            rep.add("RegionColor", a, "in $r2 but Unalloc")
    grays = set()
    for a, col in colored.items():
        if a not in to_abs:
            rep.add("AllocColor", a, f"{COLOR_NAMES[col]} but $toAbs is NO_ABS")
            continue
        if sp is not None and a < sp:
            if col != WHITE:
                rep.add("ColorRange", a, f"{COLOR_NAMES[col]} behind the sweep pointer")
            elif r2[a] == NO_ABS or to_abs[a] != r2[a]:
                rep.add("RegionColor", a, "swept survivor is not in $r2")
            else:
                check_obj_inv(h, a, r2, r2, rep)
            continue
        if col == WHITE:
            if r1[a] == NO_ABS or r2[a] != NO_ABS or to_abs[a] != r1[a]:
                rep.add("RegionColor", a, "White needs $r1 mapped and $r2 unmapped")
            check_obj_inv(h, a, r1, r1, rep)
        elif col == GRAY:
            grays.add(a)
            if r1[a] == NO_ABS or r2[a] != r1[a]:
                rep.add("RegionColor", a, "Gray needs $r1 = $r2 mapped")
            check_obj_inv(h, a, r1, r1, rep)
        else:
            if r1[a] == NO_ABS or r2[a] != r1[a]:
                rep.add("RegionColor", a, "Black needs $r1 = $r2 mapped")
            check_obj_inv(h, a, r2, r2, rep)
            node = to_abs[a]
            an = ghost.abs_heap.nodes.get(node)
            if an is None:
                continue
            for j in range(2, len(an.kinds)):
                if not an.kinds[j]:
                    continue
                w = heap.load(a + 4 * j)
                if sp is not None and w - 4 < sp:
                    continue  # already swept: White there means survivor
                if lo <= w <= hi and w - 4 >= lo and colored.get(w - 4) == WHITE:
                    rep.add("TriColor", a, f"Black field {j} points to White object {w - 4:#x}")
    if phase == "mark":
        stack = {p - 4 for p in c.mark_stack}
        if stack != grays:
            rep.add("MarkStack", min(stack ^ grays),
                    f"{len(grays - stack)} Gray objects off the stack, "
                    f"{len(stack - grays)} stack entries not Gray")
    elif grays:
        rep.add("MarkStack", min(grays), f"Gray object outside the mark phase ({phase})")
    objects = _extents(h, to_abs, rep)
    rep.merge(check_free_list(h, objects))
    _check_cache(h, objects, rep)
    return rep


def check_conservation(h, m) -> CheckReport:
    """live + free-list + unlisted fragments + cache = GC-space bytes, cross-checked."""
    rep = CheckReport()
    c = h.collector
    nbytes = h.heap.nbytes
    objects = _extents(h, h.ghost.to_abs, rep)
    live = sum(e - a for a, e, _ in objects)
    free = sum(c.fs.values())
    cache = c.cache_size
    total = m.live_bytes + m.free_list_bytes + m.fragment_bytes + m.cache_bytes
    if total != nbytes:
        rep.add("Conservation", m.epoch, f"live {m.live_bytes} + free {m.free_list_bytes} + "
                f"fragments {m.fragment_bytes} + cache {m.cache_bytes} = {total} != {nbytes}")
    if live != m.live_bytes:
        rep.add("Conservation", m.epoch, f"reported live {m.live_bytes}, mapped objects hold {live}")
    if free != m.free_list_bytes or cache != m.cache_bytes:
        rep.add("Conservation", m.epoch, "free-list or cache bytes disagree with allocator state")
    spans = [(a, e) for a, e, _ in objects] + [(f, f + s) for f, s in c.fs.items()]
    if cache:
        spans.append((c.cache_ptr, c.cache_ptr + cache))
    spans.sort()
    covered, prev_end = 0, None
    for a, e in spans:
        if prev_end is not None and a < prev_end:
            rep.add("Conservation", a, "byte ranges are counted twice")
        covered += e - a
        prev_end = e if prev_end is None else max(prev_end, e)
    if nbytes - covered != m.fragment_bytes:
        rep.add("Conservation", m.epoch,
                f"census finds {nbytes - covered} unlisted bytes, sweep counted {m.fragment_bytes}")
    return rep


# -- copying --------------------------------------------------------------------


def _space_bounds(h, rep: CheckReport, mutator: bool) -> bool:
    c, heap = h.collector, h.heap
    lo, hi = heap.mem_lo, heap.mem_hi
    ok = True
    if not lo <= c.Fi <= c.Fk <= c.Fl <= hi:
        rep.add("SpaceBounds", c.Fi, f"from-space chain broken: Fi={c.Fi:#x} Fk={c.Fk:#x} Fl={c.Fl:#x}")
        ok = False
    if not lo <= c.Ti <= c.Tj <= c.Tk <= c.Tl <= hi:
        rep.add("SpaceBounds", c.Ti,
                f"to-space chain broken: Ti={c.Ti:#x} Tj={c.Tj:#x} Tk={c.Tk:#x} Tl={c.Tl:#x}")
        ok = False
    if not (c.Fl <= c.Ti or c.Tl <= c.Fi):
        rep.add("SpaceBounds", c.Fi, "semispaces overlap")
        ok = False
    if c.Fl - c.Fi != c.Tl - c.Ti:
        rep.add("SpaceBounds", c.Fi, "semispaces differ in size")
        ok = False
    if mutator and not c.Ti == c.Tj == c.Tk:
        rep.add("SpaceBounds", c.Ti, "to-space is not empty at a mutator boundary")
        ok = False
    return ok


def _tiles(h, region: RegionMap, lo: int, hi: int, what: str, rep: CheckReport) -> None:
    pos = lo
    for a, e, _ in _extents(h, region, rep):
        if a != pos:
            rep.add("CopyRegion", a, f"{what} object at {a:#x}, expected {pos:#x}")
            return
        pos = e
    if pos != hi:
        rep.add("CopyRegion", pos, f"{what} objects end at {pos:#x}, bump pointer is {hi:#x}")


def _start_bits(h, lo: int, hi: int, region: RegionMap, what: str, rep: CheckReport) -> None:
    got = set(h.heap.started_bases(lo, hi)) if lo < hi else set()
    want = set(region.addresses())
    if got != want:
        a = min(got ^ want)
        rep.add("StartBits", a, f"{what} start bit at {a:#x} is {'set' if a in got else 'clear'}")


def check_mutator_inv_copy(h) -> CheckReport:
    rep = CheckReport()
    _well_formed(h, rep)
    if not _space_bounds(h, rep, mutator=True):
        return rep
    c, heap = h.collector, h.heap
    to_abs = h.ghost.to_abs
    for a in to_abs.addresses():
        if not c.Fi <= a < c.Fk:
            rep.add("CopyRegion", a, "mapped object outside allocated from-space")
        elif c.is_forwarded(heap.load(a + 4)):
            rep.add("Forwarding", a, "from-space object carries a forwarding pointer")
    _tiles(h, to_abs, c.Fi, c.Fk, "from-space", rep)
    _start_bits(h, heap.mem_lo, heap.mem_hi, to_abs, "heap", rep)
    for a in to_abs.addresses():
        check_obj_inv(h, a, to_abs, to_abs, rep)
    _check_roots(h, rep)
    return rep


def check_gc_inv_copy(h) -> CheckReport:
    ghost = h.ghost
    if ghost.r1 is None:
        return check_mutator_inv_copy(h)
    rep = CheckReport()
    _well_formed(h, rep)
    if not _space_bounds(h, rep, mutator=False):
        return rep
    c, heap = h.collector, h.heap
    to_abs, r1, r2 = ghost.to_abs, ghost.r1, ghost.r2
    _tiles(h, r1, c.Fi, c.Fk, "from-space", rep)
    _tiles(h, r2, c.Ti, c.Tk, "to-space", rep)
    for a, node in r2.items():
        if to_abs[a] != node:
            rep.add("CopyRegion", a, "to-space copy is not mapped by $toAbs")
    for a in to_abs.addresses():
        if a not in r2 and a not in r1:
            rep.add("CopyRegion", a, "$toAbs maps an address outside both regions")
    for a, node in r1.items():
        hdr = heap.load(a + 4)
        if c.is_forwarded(hdr):
            if to_abs[a] != NO_ABS:
                rep.add("Forwarding", a, "forwarded object still mapped by $toAbs")
            if r2[hdr - 4] != node:
                rep.add("Forwarding", a, f"forwarding pointer {hdr:#x} reaches node "
                                         f"{r2[hdr - 4]}, expected {node}")
        else:
            if to_abs[a] != node:
                rep.add("Forwarding", a, "unforwarded object is not mapped by $toAbs")
            check_obj_inv(h, a, r1, r1, rep)
    for a in r2.addresses():
        if a < c.Tj:
            check_obj_inv(h, a, r2, r2, rep, predicate="ThreeZone")
        else:
            check_obj_inv(h, a, r2, r1, rep, predicate="ThreeZone",
                          alt=r2 if a == c.scanning else None)
    _start_bits(h, c.Ti, c.Tl, r2, "to-space", rep)
    _start_bits(h, c.Fi, c.Fl, r1, "from-space", rep)
    return rep


# -- dispatch and post-collection checks -----------------------------------------


def check_mutator_inv(h) -> CheckReport:
    if h.collector.name == "marksweep":
        return check_mutator_inv_ms(h)
    return check_mutator_inv_copy(h)


def check_gc_inv(h) -> CheckReport:
    if h.collector.name == "marksweep":
        return check_gc_inv_ms(h)
    return check_gc_inv_copy(h)


def check_phase(h) -> CheckReport:
    """The predicate appropriate to the snapshot's phase."""
    if h.ghost.collecting or getattr(h.collector, "phase", "mutator") != "mutator":
        return check_gc_inv(h)
    return check_mutator_inv(h)


def check_effectiveness(h, epoch: int) -> CheckReport:
    rep = CheckReport()
    reached = h.ghost.reached
    for a, node in h.ghost.to_abs.items():
        if not reached.reached_since(node, epoch):
            rep.add("Effectiveness", a, f"node {node} survived epoch {epoch} without being reached")
    return rep


def check_survival(h, expected: Optional[set]) -> CheckReport:
    """Survivors are exactly the oracle-reachable nodes; copied bytes match their sizes."""
    rep = CheckReport()
    if expected is None:
        return rep
    absh = h.ghost.abs_heap
    live = set(h.ghost.to_abs.nodes())
    if live != expected:
        extra, missing = sorted(live - expected), sorted(expected - live)
        rep.add("Survival", (extra or missing)[0],
                f"{len(extra)} unreachable survivors, {len(missing)} reachable nodes lost")
    want = sum(absh.size_bytes(n) for n in expected if n in absh.nodes)
    m = h.collector.metrics[-1] if h.collector.metrics else None
    if m is not None and m.live_bytes != want:
        rep.add("Survival", m.epoch, f"collector kept {m.live_bytes} bytes, reachable nodes need {want}")
    return rep
