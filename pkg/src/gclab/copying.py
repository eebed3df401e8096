"""Cheney semispace collector.

From-space is ``[Fi, Fl)`` with bump pointer ``Fk``; to-space is ``[Ti, Tl)``
with scan pointer ``Tj`` and free pointer ``Tk``.  A copied object's old
header is overwritten with the new canonical pointer; since descriptor ids
live below ``mem_lo``, a header is a forwarding pointer exactly when it falls
inside to-space.  Object starts are tracked in the start-bit vector so that
interior root pointers can be resolved.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import List, Optional

from .abstract_graph import NO_ABS, RegionMap
from .errors import CollectorFault, DanglingPointerError, OutOfMemory
from .ghost import NullObserver
from .heap_model import WORD_MASK, interior_to_base


@dataclass
class CopyMetrics:
    epoch: int
    bytes_copied: int = 0
    objects_copied: int = 0
    queue_high_water: int = 0
    from_bytes_used: int = 0
    heap_bytes: int = 0
    semispace_bytes: int = 0
    pause_steps: int = 0

    @property
    def survival_ratio(self) -> float:
        return self.bytes_copied / self.from_bytes_used if self.from_bytes_used else 0.0

    @property
    def live_bytes(self) -> int:
        return self.bytes_copied

    @property
    def freed_or_copied_bytes(self) -> int:
        return self.bytes_copied

    @property
    def free_list_entries(self) -> int:
        return 0

    @property
    def occupancy_pct(self) -> float:
        return 100.0 * self.bytes_copied / self.semispace_bytes if self.semispace_bytes else 0.0

    def to_json(self) -> dict:
        d = asdict(self)
        d["survival_ratio"] = self.survival_ratio
        return d


class CopyingCollector:
    name = "copying"

    def __init__(self, heap, descriptors, ghost, observer=None):
        self.heap = heap
        self.descriptors = descriptors
        self.ghost = ghost
        self.observer = observer or NullObserver()
        lo, hi = heap.mem_lo, heap.mem_hi
        mid = lo + (((hi - lo) // 2) & ~3)
        self.mem_mid = mid
        self.Fi = self.Fk = lo
        self.Fl = mid
        self.Ti = self.Tj = self.Tk = mid
        self.Tl = hi
        self.phase = "mutator"
        self.scanning: Optional[int] = None
        self.metrics: List[CopyMetrics] = []
        self._m: Optional[CopyMetrics] = None

    # -- geometry --------------------------------------------------------------

    def is_forwarded(self, header: int) -> bool:
        return self.Ti <= header < self.Tl

    def size_of(self, ptr: int) -> int:
        h = self.heap.load(ptr)
        if self.Ti <= h < self.Tl:
            h = self.heap.load(h)
        return self.descriptors.size_of(h)

    def resolve(self, a: int) -> int:
        """Canonical from-space pointer for a (possibly interior) root value."""
        if not self.Fi < a <= self.Fk:
            raise DanglingPointerError(f"{a:#x} is not inside allocated from-space")
        return interior_to_base(self.heap, a, self.size_of, use_start_bits=True, lo=self.Fi)

    # -- allocation ------------------------------------------------------------

    def allocate(self, kinds, preheader: int, node: int, roots: List[int]) -> int:
        did = self.descriptors.intern(kinds)
        size = 4 * len(kinds)
        if self.Fk + size > self.Fl:
            self.collect(roots)
            if self.Fk + size > self.Fl:
                raise OutOfMemory(f"no room for a {size}-byte object after collection")
        base = self.Fk
        self.Fk = base + size
        heap = self.heap
        heap.zero_range(base, base + size)
        heap.store(base, preheader)
        heap.store(base + 4, did)
        heap.set_start_bit(base)
        self.ghost.to_abs[base] = node
        return base + 4

    # -- collection ------------------------------------------------------------

    def forward(self, p: int) -> int:
        h = self.heap.load(p)
        if self.Ti <= h < self.Tl:
            return h
        return self.copy_and_forward(p)

    def copy_and_forward(self, p: int) -> int:
        heap = self.heap
        ghost = self.ghost
        base = p - 4
        size = self.descriptors.size_of(heap.load(p))
        new = self.Tk
        tk = new + size
        if tk > WORD_MASK:
            raise CollectorFault("to-space reservation overflowed the address space")
        if tk > self.Tl:
            raise CollectorFault("to-space exhausted")
        self.Tk = tk
        heap.copy_words(base, new, size)
        heap.set_start_bit(new)
        heap.store(p, new + 4)
        node = ghost.r1[base]
        ghost.r2[new] = node
        ghost.to_abs[base] = NO_ABS
        ghost.to_abs[new] = node
        m = self._m
        m.bytes_copied += size
        m.objects_copied += 1
        m.pause_steps += 1
        if tk - self.Tj > m.queue_high_water:
            m.queue_high_water = tk - self.Tj
        self.observer.step(self, "forward")
        return new + 4

    def scan_step(self) -> None:
        heap = self.heap
        obj = self.Tj
        n, kinds = self.descriptors.layout(heap.load(obj + 4))
        lo, hi = heap.mem_lo, heap.mem_hi
        r1, reached = self.ghost.r1, self.ghost.reached
        self.scanning = obj
        for j in range(2, n):
            if kinds[j]:
                a = obj + 4 * j
                v = heap.load(a)
                if lo <= v <= hi:
                    reached.record(r1[v - 4])
                    heap.store(a, self.forward(v))
        self.scanning = None
        self.Tj = obj + 4 * n
        self._m.pause_steps += 1
        self.observer.step(self, "scan")

    def collect(self, roots: List[int]) -> CopyMetrics:
        ghost = self.ghost
        self.observer.collection_started(self, roots)
        epoch = ghost.reached.advance()
        ghost.r1 = ghost.to_abs.copy()
        ghost.r2 = RegionMap()
        m = self._m = CopyMetrics(epoch=epoch, from_bytes_used=self.Fk - self.Fi,
                                  heap_bytes=self.heap.nbytes, semispace_bytes=self.Fl - self.Fi)
        self.phase = "copy"
        for slot, a in enumerate(roots):
            if not a:
                continue
            p = self.resolve(a)
            ghost.reached.record(ghost.r1[p - 4])
            roots[slot] = self.forward(p) + (a - p)
        while self.Tj < self.Tk:
            self.scan_step()
        # swap spaces
        old_fi, old_fl = self.Fi, self.Fl
        self.Fi, self.Fk, self.Fl = self.Ti, self.Tk, self.Tl
        self.Ti = self.Tj = self.Tk = old_fi
        self.Tl = old_fl
        ghost.to_abs = ghost.r2
        ghost.r1 = None
        ghost.r2 = None
        self.heap.clear_start_range(self.Ti, self.Tl)
        self.phase = "mutator"
        self._m = None
        self.metrics.append(m)
        self.observer.collection_finished(self, m)
        return m

    # -- snapshots -------------------------------------------------------------

    def bounds(self) -> dict:
        return {k: getattr(self, k) for k in ("Fi", "Fk", "Fl", "Ti", "Tj", "Tk", "Tl")}

    def state_json(self) -> dict:
        d = self.bounds()
        d.update(mem_mid=self.mem_mid, phase=self.phase, scanning=self.scanning)
        return d

    def load_state(self, obj: dict) -> None:
        for k in ("Fi", "Fk", "Fl", "Ti", "Tj", "Tk", "Tl"):
            setattr(self, k, int(obj[k]))
        self.mem_mid = int(obj.get("mem_mid", self.mem_mid))
        self.phase = obj.get("phase", "mutator")
        self.scanning = obj.get("scanning")
