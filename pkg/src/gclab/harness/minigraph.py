"""Random two-field graphs built identically in three worlds.

The same graph (node ``k`` has fields ``edges[k]``) is materialized in the
abstract heap and in both mark-sweep heaps (recursive reference and practical),
so that the sets of marked nodes can be compared exactly.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import List, Sequence, Tuple

from ..abstract_graph import AbstractHeap, NodeRef, RegionMap
from ..heap_model import BLACK
from ..marksweep import MarkSweepMetrics
from ..mutator import initialize
from .reference import RefMarkSweep

MINI_SHAPE = (False, False, True, True)


@dataclass
class MiniGraph:
    edges: List[Tuple[int, int]]  # node index -> (field 0 target, field 1 target)
    roots: List[int]              # node indices held in roots

    @property
    def size(self) -> int:
        return len(self.edges)


def random_mini_graph(rng: random.Random, max_objects: int = 64) -> MiniGraph:
    n = rng.randint(1, max_objects)
    # mix of self loops (fresh-node default), local links and long jumps
    edges = []
    for k in range(n):
        pair = []
        for _ in range(2):
            r = rng.random()
            if r < 0.25:
                pair.append(k)
            elif r < 0.6:
                pair.append(min(n - 1, k + 1))
            else:
                pair.append(rng.randrange(n))
        edges.append((pair[0], pair[1]))
    roots = [rng.randrange(n) for _ in range(rng.choice((0, 1, 1, 2, 3)))]
    return MiniGraph(edges, roots)


def abstract_marked(g: MiniGraph) -> set:
    h = AbstractHeap()
    for _ in g.edges:
        h.fresh_node(4, MINI_SHAPE)
    for k, (a, b) in enumerate(g.edges):
        h.write(k + 1, 2, NodeRef(a + 1))
        h.write(k + 1, 3, NodeRef(b + 1))
    return h.reachable_set(r + 1 for r in g.roots)


def ref_marked(g: MiniGraph) -> set:
    c = RefMarkSweep(num_objects=g.size)
    ptrs = [c.alloc([])[0] for _ in g.edges]
    for k, (a, b) in enumerate(g.edges):
        c.write_field(ptrs[k], 0, ptrs[a])
        c.write_field(ptrs[k], 1, ptrs[b])
    black = c.mark_roots([ptrs[r] for r in g.roots])
    return {c.to_abs[p] for p in black}


def practical_marked(g: MiniGraph, heap_bytes: int = 4096) -> set:
    """Run only the iterative mark phase of the practical collector."""
    h = initialize(collector="marksweep", heap_bytes=heap_bytes, check="off", root_slots=4)
    ptrs = [h.alloc(MINI_SHAPE)[0] for _ in g.edges]
    for k, (a, b) in enumerate(g.edges):
        h.write_field(ptrs[k], 2, ptrs[a])
        h.write_field(ptrs[k], 3, ptrs[b])
    c, ghost = h.collector, h.ghost
    epoch = ghost.reached.advance()
    ghost.r1 = ghost.to_abs.copy()
    ghost.r2 = RegionMap()
    c.mark_phase([ptrs[r] for r in g.roots], MarkSweepMetrics(epoch=epoch))
    return {ghost.to_abs[a] for a, col in h.heap.colored_bases().items() if col == BLACK}
