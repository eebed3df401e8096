"""Iterative mark-sweep collector with a local-cache bump allocator.

Small objects (< 192 bytes) are bump-allocated downwards from a local cache
carved out of the first free-list chunk; large objects are placed first-fit
at the high end of a chunk.  Sweep rebuilds the free list in address order
from regions of at least 256 bytes; smaller gaps are left unlisted until a
later sweep merges them.  The top sixteenth of GC space is a wilderness area
consulted only when a large allocation cannot be satisfied otherwise.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, List, Optional

from .abstract_graph import NO_ABS, RegionMap
from .errors import CollectorFault, OutOfMemory
from .ghost import NullObserver
from .heap_model import BLACK, GRAY, UNALLOC, WHITE, interior_to_base

MIN_CACHE_SIZE = 256
LARGE_OBJECT = 192
MIN_FREE_ENTRY = 8
MAX_CACHE_SIZE = 4096
WILDERNESS_FRACTION = 16


@dataclass
class MarkSweepMetrics:
    epoch: int
    live_bytes: int = 0
    freed_bytes: int = 0
    fragment_bytes: int = 0
    free_list_bytes: int = 0
    free_list_entries: int = 0
    largest_entry: int = 0
    cache_bytes: int = 0
    heap_bytes: int = 0
    live_objects: int = 0
    pushes: int = 0
    mark_stack_high_water: int = 0
    pause_steps: int = 0

    @property
    def freed_or_copied_bytes(self) -> int:
        return self.freed_bytes

    @property
    def occupancy_pct(self) -> float:
        return 100.0 * self.live_bytes / self.heap_bytes if self.heap_bytes else 0.0

    def to_json(self) -> dict:
        return asdict(self)


class MarkSweepCollector:
    name = "marksweep"

    def __init__(self, heap, descriptors, ghost, observer=None,
                 max_cache_size: int = MAX_CACHE_SIZE,
                 mark_stack_limit: Optional[int] = None,
                 wilderness_fraction: int = WILDERNESS_FRACTION, fresh: bool = True):
        self.heap = heap
        self.descriptors = descriptors
        self.ghost = ghost
        self.observer = observer or NullObserver()
        self.max_cache_size = max_cache_size
        self.mark_stack_limit = mark_stack_limit
        wild = (heap.nbytes // wilderness_fraction) & ~3 if wilderness_fraction else 0
        self.wild_lo = heap.mem_hi - wild
        self.phase = "mutator"
        self.sweep_ptr = heap.mem_lo
        self.mark_stack: List[int] = []
        self.free_head = 0
        self.fs: Dict[int, int] = {}  # ghost: entry -> size
        self.fn: Dict[int, int] = {}  # ghost: entry -> next
        self.cache_ptr = 0
        self.cache_size = 0
        self.metrics: List[MarkSweepMetrics] = []
        if fresh:
            self._initialize()

    def _initialize(self) -> None:
        lo, hi = self.heap.mem_lo, self.wild_lo
        if hi - lo >= MIN_CACHE_SIZE:
            self._append_entry(0, lo, hi - lo)

    # -- object geometry -------------------------------------------------------

    def size_of(self, ptr: int) -> int:
        return self.descriptors.size_of(self.heap.load(ptr))

    def resolve(self, a: int) -> int:
        """Canonical pointer for a (possibly interior) root value."""
        return interior_to_base(self.heap, a, self.size_of)

    # -- free list -------------------------------------------------------------

    def _append_entry(self, tail: int, addr: int, size: int) -> None:
        heap = self.heap
        heap.store(addr, 0)
        heap.store(addr + 4, size)
        self.fs[addr] = size
        self.fn[addr] = 0
        if tail:
            heap.store(tail, addr)
            self.fn[tail] = addr
        else:
            self.free_head = addr

    def _unlink(self, prev: int, entry: int) -> None:
        nxt = self.fn.pop(entry)
        del self.fs[entry]
        if prev:
            self.heap.store(prev, nxt)
            self.fn[prev] = nxt
        else:
            self.free_head = nxt

    def _shrink(self, entry: int, size: int) -> None:
        self.heap.store(entry + 4, size)
        self.fs[entry] = size

    def free_list(self) -> List[tuple]:
        out = []
        e = self.free_head
        while e:
            out.append((e, self.heap.load(e + 4)))
            e = self.heap.load(e)
        return out

    def insert_free_entry(self, addr: int, size: int) -> None:
        """Splice an entry into the address-ordered list (test and tooling use)."""
        prev, cur = 0, self.free_head
        while cur and cur < addr:
            prev, cur = cur, self.fn[cur]
        heap = self.heap
        heap.store(addr, cur)
        heap.store(addr + 4, size)
        self.fs[addr] = size
        self.fn[addr] = cur
        if prev:
            heap.store(prev, addr)
            self.fn[prev] = addr
        else:
            self.free_head = addr

    # -- allocation ------------------------------------------------------------

    def allocate(self, kinds, preheader: int, node: int, roots: List[int]) -> int:
        did = self.descriptors.intern(kinds)
        size = 4 * len(kinds)
        if size < LARGE_OBJECT:
            start = self._allocate_small(size, roots)
        else:
            start = self._allocate_large(size, roots)
        heap = self.heap
        heap.zero_range(start, start + size)
        heap.store(start, preheader)
        heap.store(start + 4, did)
        heap.set_color(start, WHITE)
        self.ghost.to_abs[start] = node
        return start + 4

    def _allocate_small(self, size: int, roots) -> int:
        if size > self.cache_size:
            if not self.free_head:
                self.collect(roots)
                if not self.free_head:
                    raise OutOfMemory(f"no free-list chunk for a {size}-byte object")
            self._refill_cache()
        start = self.cache_ptr + self.cache_size - size
        self.cache_size -= size
        return start

    def _refill_cache(self) -> None:
        chunk = self.free_head
        csize = self.fs[chunk]
        if csize - self.max_cache_size >= MIN_CACHE_SIZE:
            rest = csize - self.max_cache_size
            self._shrink(chunk, rest)
            self.cache_ptr = chunk + rest
            self.cache_size = self.max_cache_size
        else:
            self._unlink(0, chunk)
            self.cache_ptr = chunk
            self.cache_size = csize

    def _first_fit(self, size: int):
        prev, cur = 0, self.free_head
        fs, fn = self.fs, self.fn
        while cur:
            if fs[cur] >= size:
                return prev, cur
            prev, cur = cur, fn[cur]
        return None

    def _allocate_large(self, size: int, roots) -> int:
        hit = self._first_fit(size)
        if hit is None:
            self.collect(roots)
            hit = self._first_fit(size)
        if hit is None:
            start = self._wilderness_fit(size)
            if start is None:
                raise OutOfMemory(f"no room for a {size}-byte object")
            return start
        prev, chunk = hit
        rest = self.fs[chunk] - size
        start = chunk + rest
        if rest < MIN_CACHE_SIZE:
            self._unlink(prev, chunk)
        else:
            self._shrink(chunk, rest)
        return start

    def _wilderness_fit(self, size: int) -> Optional[int]:
        heap = self.heap
        a, end = self.wild_lo, heap.mem_hi
        run = None
        while a < end:
            if heap.color_of(a):
                run = None
                a += self.size_of(a + 4)
            else:
                if run is None:
                    run = a
                a += 4
                if a - run >= size:
                    return run
        return None

    # -- collection ------------------------------------------------------------

    def collect(self, roots: List[int]) -> MarkSweepMetrics:
        ghost = self.ghost
        self.observer.collection_started(self, roots)
        epoch = ghost.reached.advance()
        ghost.r1 = ghost.to_abs.copy()
        ghost.r2 = RegionMap()
        m = MarkSweepMetrics(epoch=epoch, heap_bytes=self.heap.nbytes)
        self.mark_phase(roots, m)
        self.sweep_phase(m)
        ghost.r1 = None
        ghost.r2 = None
        self.phase = "mutator"
        self.metrics.append(m)
        self.observer.collection_finished(self, m)
        return m

    def mark_phase(self, roots, m: MarkSweepMetrics) -> None:
        heap = self.heap
        ghost = self.ghost
        r1, r2, reached = ghost.r1, ghost.r2, ghost.reached
        layout = self.descriptors.layout
        load, color_of, set_color = heap.load, heap.color_of, heap.set_color
        lo, hi = heap.mem_lo, heap.mem_hi
        limit = self.mark_stack_limit
        observer = self.observer
        stack = self.mark_stack = []
        self.phase = "mark"

        def shade(base):
            if limit is not None and len(stack) >= limit:
                raise CollectorFault(f"mark stack overflow at depth {limit}")
            set_color(base, GRAY)
            stack.append(base + 4)
            node = r1[base]
            r2[base] = node
            reached.record(node)
            m.pushes += 1
            if len(stack) > m.mark_stack_high_water:
                m.mark_stack_high_water = len(stack)

        for a in roots:
            if not a:
                continue
            base = self.resolve(a) - 4
            if color_of(base) == WHITE:
                shade(base)
                observer.step(self, "mark")
        while stack:
            p = stack.pop()
            base = p - 4
            n, kinds = layout(load(p))
            for j in range(2, n):
                if kinds[j]:
                    v = load(base + 4 * j)
                    if lo <= v <= hi and color_of(v - 4) == WHITE:
                        shade(v - 4)
            set_color(base, BLACK)
            m.pause_steps += 1
            observer.step(self, "mark")

    def sweep_phase(self, m: MarkSweepMetrics) -> None:
        heap = self.heap
        to_abs = self.ghost.to_abs
        color_of, set_color, size_of = heap.color_of, heap.set_color, self.size_of
        observer = self.observer
        self.phase = "sweep"
        self.cache_ptr = 0
        self.cache_size = 0
        self.free_head = 0
        self.fs = {}
        self.fn = {}
        tail = 0
        addr = region = heap.mem_lo
        self.sweep_ptr = addr
        end = self.wild_lo
        while addr < end:
            c = color_of(addr)
            if c == BLACK:
                gap = addr - region
                if gap >= MIN_CACHE_SIZE:
                    self._append_entry(tail, region, gap)
                    tail = region
                else:
                    m.fragment_bytes += gap
                set_color(addr, WHITE)
                sz = size_of(addr + 4)
                m.live_bytes += sz
                m.live_objects += 1
                addr += sz
                region = addr
            elif c == WHITE:
                set_color(addr, UNALLOC)
                to_abs[addr] = NO_ABS
                sz = size_of(addr + 4)
                m.freed_bytes += sz
                addr += sz
            elif c == UNALLOC:
                addr += 4
                continue
            else:
                raise CollectorFault(f"gray object at {addr:#x} during sweep")
            self.sweep_ptr = addr
            m.pause_steps += 1
            observer.step(self, "sweep")
        gap = end - region
        if gap >= MIN_CACHE_SIZE:
            self._append_entry(tail, region, gap)
        else:
            m.fragment_bytes += gap
        # wilderness: reclaim objects but never list its free space
        addr = end
        while addr < heap.mem_hi:
            c = color_of(addr)
            if c == BLACK:
                set_color(addr, WHITE)
                sz = size_of(addr + 4)
                m.live_bytes += sz
                m.live_objects += 1
            elif c == WHITE:
                set_color(addr, UNALLOC)
                to_abs[addr] = NO_ABS
                sz = size_of(addr + 4)
                m.freed_bytes += sz
                m.fragment_bytes += sz
            elif c == UNALLOC:
                m.fragment_bytes += 4
                addr += 4
                continue
            else:
                raise CollectorFault(f"gray object at {addr:#x} during sweep")
            addr += sz
            self.sweep_ptr = addr
            m.pause_steps += 1
            observer.step(self, "sweep")
        self.sweep_ptr = heap.mem_hi
        m.free_list_entries = len(self.fs)
        m.free_list_bytes = sum(self.fs.values())
        m.largest_entry = max(self.fs.values(), default=0)
        m.cache_bytes = self.cache_size

    # -- snapshots -------------------------------------------------------------

    def state_json(self) -> dict:
        return {
            "wild_lo": self.wild_lo,
            "free_head": self.free_head,
            "fs": {str(k): v for k, v in self.fs.items()},
            "fn": {str(k): v for k, v in self.fn.items()},
            "cache_ptr": self.cache_ptr,
            "cache_size": self.cache_size,
            "max_cache_size": self.max_cache_size,
            "phase": self.phase,
            "sweep_ptr": self.sweep_ptr,
            "mark_stack": list(self.mark_stack),
        }

    def load_state(self, obj: dict) -> None:
        self.wild_lo = int(obj["wild_lo"])
        self.free_head = int(obj["free_head"])
        self.fs = {int(k): int(v) for k, v in obj["fs"].items()}
        self.fn = {int(k): int(v) for k, v in obj["fn"].items()}
        self.cache_ptr = int(obj["cache_ptr"])
        self.cache_size = int(obj["cache_size"])
        self.max_cache_size = int(obj.get("max_cache_size", MAX_CACHE_SIZE))
        self.phase = obj.get("phase", "mutator")
        self.sweep_ptr = int(obj.get("sweep_ptr", self.heap.mem_lo))
        self.mark_stack = [int(x) for x in obj.get("mark_stack", [])]
