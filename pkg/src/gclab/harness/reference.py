"""Miniature reference collectors used as brute-force oracles.

Both use object addressing: one address holds one whole object with exactly
two pointer fields, and a freshly allocated object points to itself.  They
follow the textbook shapes closely: recursive mark with a linear sweep, and a
Cheney copy with an explicit forwarding array.  The single root is generalized
to a list of root slots.
"""

from __future__ import annotations

import sys
from contextlib import contextmanager
from typing import Dict, List, Optional, Sequence, Tuple

from ..abstract_graph import NO_ABS, ReachedRecord, RegionMap, well_formed
from ..errors import ContractViolation, OutOfMemory
from ..invariants import CheckReport

UNALLOC, WHITE, GRAY, BLACK = 0, 1, 2, 3


@contextmanager
def _deep_recursion(depth: int):
    old = sys.getrecursionlimit()
    if depth + 200 > old:
        sys.setrecursionlimit(depth + 200)
    try:
        yield
    finally:
        sys.setrecursionlimit(old)


class _MiniBase:
    def __init__(self):
        self.abs_mem: Dict[int, List[int]] = {}
        self.to_abs = RegionMap()
        self.next_abs = 1
        self.reached = ReachedRecord()

    def fresh_abs(self) -> int:
        a = self.next_abs
        self.next_abs += 1
        self.abs_mem[a] = [a, a]
        return a

    def _pointer(self, ptr: int) -> int:
        node = self.to_abs[ptr]
        if node == NO_ABS:
            raise ContractViolation(f"{ptr} is not a live miniature object")
        return node

    def read_field(self, ptr: int, field: int) -> int:
        self._pointer(ptr)
        if field not in (0, 1):
            raise ContractViolation(f"miniature objects have fields 0 and 1, not {field}")
        return self.mem[ptr][field]

    def write_field(self, ptr: int, field: int, val: int) -> None:
        node = self._pointer(ptr)
        target = self._pointer(val)
        if field not in (0, 1):
            raise ContractViolation(f"miniature objects have fields 0 and 1, not {field}")
        self.mem[ptr][field] = val
        self.abs_mem[node][field] = target

    def live_nodes(self) -> set:
        return set(self.to_abs.nodes())

    def check(self) -> CheckReport:
        """MutatorInv of the miniature model: wellFormed plus ObjInv everywhere."""
        rep = CheckReport()
        if not well_formed(self.to_abs):
            rep.add("WellFormed", None, "$toAbs is not injective")
        for i, node in self.to_abs.items():
            for f in (0, 1):
                v = self.mem[i][f]
                if self.to_abs[v] != self.abs_mem[node][f]:
                    rep.add("ObjInv", i, f"field {f} -> {v} maps to {self.to_abs[v]}, "
                                         f"abstract {self.abs_mem[node][f]}")
        return rep


class RefMarkSweep(_MiniBase):
    """Recursive mark, linear sweep, linear-search allocation."""

    name = "ref-ms"

    def __init__(self, num_objects: int = 64, mem_lo: int = 1):
        super().__init__()
        if mem_lo <= 0 or num_objects <= 0:
            raise ValueError("need 0 < memLo and at least one object slot")
        self.mem_lo = mem_lo
        self.mem_hi = mem_lo + num_objects
        size = self.mem_hi
        self.color = [UNALLOC] * size
        self.mem = [[0, 0] for _ in range(size)]
        self.collections = 0
        self.mark_visits = 0

    def mem_addr(self, i: int) -> bool:
        return self.mem_lo <= i < self.mem_hi

    def mark(self, ptr: int) -> None:
        self.mark_visits += 1
        if self.color[ptr] == WHITE:
            self.color[ptr] = GRAY
            self.reached.record(self.to_abs[ptr])
            self.mark(self.mem[ptr][0])
            self.mark(self.mem[ptr][1])
            self.color[ptr] = BLACK

    def sweep(self) -> None:
        ptr = self.mem_lo
        while ptr < self.mem_hi:
            if self.color[ptr] == WHITE:
                self.color[ptr] = UNALLOC
                self.to_abs[ptr] = NO_ABS
            elif self.color[ptr] == BLACK:
                self.color[ptr] = WHITE
            ptr += 1

    def mark_roots(self, roots: Sequence[int]) -> set:
        """Run only the mark phase; return the Black addresses."""
        self.reached.advance()
        with _deep_recursion(self.mem_hi - self.mem_lo):
            for r in roots:
                if r:
                    self.mark(r)
        return {i for i in range(self.mem_lo, self.mem_hi) if self.color[i] == BLACK}

    def collect(self, roots: List[int]) -> None:
        self.collections += 1
        self.mark_roots(roots)
        self.sweep()

    def alloc(self, roots: List[int]) -> Tuple[int, int]:
        """Returns (ptr, abstract node); roots are never moved."""
        for attempt in range(2):
            ptr = self.mem_lo
            while ptr < self.mem_hi:
                if self.color[ptr] == UNALLOC:
                    node = self.fresh_abs()
                    self.color[ptr] = WHITE
                    self.to_abs[ptr] = node
                    self.mem[ptr] = [ptr, ptr]
                    return ptr, node
                ptr += 1
            if attempt == 0:
                self.collect(roots)
        raise OutOfMemory("miniature mark-sweep heap is full of reachable objects")


class RefCopy(_MiniBase):
    """Cheney copying with an explicit forwarding array and space swap."""

    name = "ref-copy"

    def __init__(self, semispace: int = 32, mem_lo: int = 1):
        super().__init__()
        if mem_lo <= 0 or semispace <= 0:
            raise ValueError("need 0 < memLo and a non-empty semispace")
        self.mem_lo = mem_lo
        self.mem_mid = mem_lo + semispace
        self.mem_hi = mem_lo + 2 * semispace
        size = self.mem_hi
        self.mem = [[0, 0] for _ in range(size)]
        self.fwd = [0] * size
        self.Fi = self.Fk = mem_lo
        self.Fl = self.Ti = self.Tj = self.Tk = self.mem_mid
        self.Tl = self.mem_hi
        self.r1: Optional[RegionMap] = None
        self.r2: Optional[RegionMap] = None
        self.collections = 0
        self.copies = 0

    def forward_fromspace_ptr(self, ptr: int) -> int:
        if self.fwd[ptr] != 0:
            return self.fwd[ptr]
        if self.Tk >= self.Tl:
            raise OutOfMemory("miniature to-space exhausted")
        ret = self.Tk
        self.mem[ret] = [self.mem[ptr][0], self.mem[ptr][1]]
        self.fwd[ret] = 0
        self.to_abs[ret] = self.r1[ptr]
        self.r2[ret] = self.r1[ptr]
        self.to_abs[ptr] = NO_ABS
        self.fwd[ptr] = ret
        self.Tk += 1
        self.copies += 1
        return ret

    def collect(self, roots: List[int]) -> None:
        self.collections += 1
        self.reached.advance()
        self.r1 = self.to_abs.copy()
        self.r2 = RegionMap()
        for slot, r in enumerate(roots):
            if r:
                self.reached.record(self.r1[r])
                roots[slot] = self.forward_fromspace_ptr(r)
        while self.Tj < self.Tk:
            tj = self.Tj
            for f in (0, 1):
                v = self.mem[tj][f]
                self.reached.record(self.r1[v])
            fwd0 = self.forward_fromspace_ptr(self.mem[tj][0])
            fwd1 = self.forward_fromspace_ptr(self.mem[tj][1])
            self.mem[tj][0] = fwd0
            self.mem[tj][1] = fwd1
            self.Tj += 1
        self.Fi, self.Ti = self.Ti, self.Fi
        self.Fl, self.Tl = self.Tl, self.Fl
        self.Fk = self.Tk
        self.Tj = self.Tk = self.Ti
        self.to_abs = self.r2
        self.r1 = self.r2 = None

    def alloc(self, roots: List[int]) -> Tuple[int, int]:
        """Returns (ptr, abstract node); ``roots`` may be rewritten in place."""
        if self.Fk >= self.Fl:
            self.collect(roots)
        if self.Fk >= self.Fl:
            raise OutOfMemory("miniature from-space is full of reachable objects")
        ptr = self.Fk
        node = self.fresh_abs()
        self.to_abs[ptr] = node
        self.mem[ptr] = [ptr, ptr]
        self.fwd[ptr] = 0
        self.Fk += 1
        return ptr, node
