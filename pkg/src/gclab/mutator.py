"""The four-operation mutator contract shared by both practical collectors.

A :class:`MutatorHandle` owns the simulated heap with its ghost state, plus one
collector.  Every operation validates its preconditions against the ghost
state and performs the concrete effect in lockstep with the abstract graph.
Depending on the check level, the invariant library runs afterwards.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

from .abstract_graph import NO_ABS, AbstractHeap, RegionMap, kinds_from_str, r_extend
from .errors import (ConfigError, ContractViolation, GCLabError, InvariantViolation,
                     OutOfMemory)
from .ghost import GhostState
from .heap_model import (DEFAULT_MEM_LO, DescriptorTable, HeapImage, is_word,
                         preheader_hash, value_decode)

COLLECTORS = ("marksweep", "copying")
CHECK_LEVELS = ("off", "gc", "step")
MIN_HEAP_BYTES = 1024


@dataclass(frozen=True)
class Shape:
    """Object shape: one kind flag per field, ``True`` for pointer fields."""

    kinds: Tuple[bool, ...]

    @classmethod
    def of(cls, num_fields: int, pointer_fields: Sequence[int] = ()) -> "Shape":
        kinds = [False] * num_fields
        for j in pointer_fields:
            kinds[j] = True
        return cls(tuple(kinds))

    @property
    def num_fields(self) -> int:
        return len(self.kinds)

    @property
    def size_bytes(self) -> int:
        return 4 * len(self.kinds)


def normalize_shape(shape) -> Tuple[int, Tuple[bool, ...]]:
    if isinstance(shape, Shape):
        kinds = shape.kinds
        n = len(kinds)
    elif isinstance(shape, tuple) and len(shape) == 2 and type(shape[0]) is int:
        n, kinds = shape
        kinds = tuple(bool(k) for k in kinds)
    elif isinstance(shape, str):
        kinds = kinds_from_str(shape)
        n = len(kinds)
    else:
        kinds = tuple(bool(k) for k in shape)
        n = len(kinds)
    if n < 2 or len(kinds) != n:
        raise ContractViolation(f"invalid shape: {n} fields, {len(kinds)} kinds")
    if kinds[0] or kinds[1]:
        raise ContractViolation("pre-header and header fields must be primitive")
    return n, kinds


@dataclass
class GCConfig:
    collector: str = "marksweep"
    heap_bytes: int = 65536
    mem_lo: int = DEFAULT_MEM_LO
    root_slots: int = 64
    check: str = "gc"
    mark_stack_limit: Optional[int] = None
    max_cache_size: int = 4096

    @property
    def mem_hi(self) -> int:
        return self.mem_lo + self.heap_bytes

    def validate(self) -> "GCConfig":
        if self.collector not in COLLECTORS:
            raise ConfigError(f"unknown collector {self.collector!r}")
        if self.check not in CHECK_LEVELS:
            raise ConfigError(f"unknown check level {self.check!r}")
        if self.heap_bytes % 4:
            raise ConfigError("heap size must be a multiple of 4 bytes")
        if self.heap_bytes < MIN_HEAP_BYTES:
            raise ConfigError(f"heap of {self.heap_bytes} bytes is below the {MIN_HEAP_BYTES}-byte minimum")
        if self.collector == "copying" and (self.heap_bytes // 4) % 2:
            raise ConfigError("copying collector needs an even number of heap words")
        if self.mem_lo <= 0 or self.mem_lo % 4:
            raise ConfigError("mem_lo must be positive and word aligned")
        if self.mem_hi > 0xFFFFFFFF:
            raise ConfigError("heap does not fit in 32 bits")
        if self.root_slots < 1:
            raise ConfigError("need at least one root slot")
        if self.max_cache_size < 256 or self.max_cache_size % 4:
            raise ConfigError("max_cache_size must be a word multiple of at least 256")
        return self

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "GCConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in obj.items() if k in known})


def _make_collector(config: GCConfig, heap, descriptors, ghost, observer, fresh=True):
    if config.collector == "marksweep":
        from .marksweep import MarkSweepCollector
        return MarkSweepCollector(heap, descriptors, ghost, observer,
                                  max_cache_size=config.max_cache_size,
                                  mark_stack_limit=config.mark_stack_limit, fresh=fresh)
    from .copying import CopyingCollector
    return CopyingCollector(heap, descriptors, ghost, observer)


def initialize(config: Optional[GCConfig] = None, **overrides) -> "MutatorHandle":
    """Build a heap with its ghost state and collector; MutatorInv holds on return."""
    config = config or GCConfig()
    if overrides:
        config = GCConfig(**{**asdict(config), **overrides})
    config.validate()
    heap = HeapImage(config.mem_lo, config.mem_hi)
    descriptors = DescriptorTable(limit=config.mem_lo)
    ghost = GhostState(AbstractHeap(gc_range=(config.mem_lo, config.mem_hi)))
    h = MutatorHandle(config, heap, descriptors, ghost)
    h.collector = _make_collector(config, heap, descriptors, ghost, h)
    if config.check != "off":
        h._enforce(h.check_mutator(), "initialize")
    return h


class MutatorHandle:
    def __init__(self, config: GCConfig, heap: HeapImage, descriptors: DescriptorTable,
                 ghost: GhostState, collector=None):
        self.config = config
        self.heap = heap
        self.descriptors = descriptors
        self.ghost = ghost
        self.collector = collector
        self.roots: List[int] = [0] * config.root_slots
        self.check_level = config.check
        self.trace_hook: Optional[Callable[[dict], None]] = None
        self.stats = {
            "collections": 0, "mutator_checks": 0, "gc_step_checks": 0,
            "rextend_checks": 0, "effectiveness_checks": 0,
            "conservation_checks": 0, "survival_checks": 0,
        }
        self._expected_live = None
        self._prev_r2 = None

    # -- convenience views --------------------------------------------------

    @property
    def mem_lo(self) -> int:
        return self.heap.mem_lo

    @property
    def mem_hi(self) -> int:
        return self.heap.mem_hi

    @property
    def abs_heap(self) -> AbstractHeap:
        return self.ghost.abs_heap

    @property
    def to_abs(self) -> RegionMap:
        return self.ghost.to_abs

    @property
    def backend(self) -> str:
        return self.collector.name

    @property
    def epoch(self) -> int:
        return self.ghost.reached.epoch

    @property
    def metrics(self):
        return self.collector.metrics

    # -- contract helpers ----------------------------------------------------

    def _node_of(self, ptr) -> int:
        if not isinstance(ptr, int) or ptr & 3:
            raise ContractViolation(f"{ptr!r} is not a canonical object pointer")
        node = self.ghost.to_abs.map.get(ptr - 4, NO_ABS)
        if node == NO_ABS:
            raise ContractViolation(f"{ptr:#x} is not a canonical pointer to a live object")
        return node

    def _field_range(self, node: int, fld) -> None:
        n = self.ghost.abs_heap.num_fields(node)
        if not isinstance(fld, int) or not 2 <= fld < n:
            raise ContractViolation(f"field {fld!r} outside [2, {n}) for node {node}")

    def _emit(self, op: str, args: dict, result) -> None:
        if self.trace_hook is not None:
            self.trace_hook({"op": op, "args": args, "result": result, "epoch": self.epoch})

    def _enforce(self, report, where: str) -> None:
        if not report.passed:
            raise InvariantViolation(report, where)

    def _after_op(self, where: str) -> None:
        if self.check_level == "step":
            self._enforce(self.check_mutator(), where)

    # -- the four operations -------------------------------------------------

    def alloc(self, shape) -> Tuple[int, int]:
        """Allocate a zeroed object; returns (canonical pointer, abstract node)."""
        n, kinds = normalize_shape(shape)
        absh = self.ghost.abs_heap
        node = absh.fresh_node(n, kinds)
        try:
            ptr = self.collector.allocate(kinds, preheader_hash(node), node, self.roots)
        except OutOfMemory:
            del absh.nodes[node]
            absh.next_id = node
            self._emit("alloc", {"num_fields": n, "kinds": _kstr(kinds)}, "oom")
            raise
        self._emit("alloc", {"num_fields": n, "kinds": _kstr(kinds)}, [ptr, node])
        self._after_op("alloc")
        return ptr, node

    def read_field(self, ptr: int, fld: int) -> int:
        node = self._node_of(ptr)
        self._field_range(node, fld)
        w = self.heap.load(ptr - 4 + 4 * fld)
        if self.check_level != "off":
            self._verify_read(node, fld, w, ptr)
        self._emit("read", {"ptr": ptr, "field": fld}, w)
        return w

    def read_value(self, ptr: int, fld: int):
        """readField followed by valueDecode under the current $toAbs."""
        w = self.read_field(ptr, fld)
        node = self.ghost.to_abs[ptr - 4]
        kind = self.ghost.abs_heap.kinds(node)[fld]
        return value_decode(kind, w, self.ghost.to_abs, self.mem_lo, self.mem_hi)

    def _verify_read(self, node, fld, w, ptr) -> None:
        from .invariants import CheckReport
        absh = self.ghost.abs_heap
        expect = absh.read(node, fld)
        try:
            got = value_decode(absh.kinds(node)[fld], w, self.ghost.to_abs, self.mem_lo, self.mem_hi)
        except GCLabError as e:
            got = e
        if got != expect:
            rep = CheckReport()
            rep.add("ObjInv", ptr - 4, f"field {fld} reads {w:#x} ({got}), abstract value {expect}")
            raise InvariantViolation(rep, "read")

    def write_field(self, ptr: int, fld: int, v: int) -> None:
        node = self._node_of(ptr)
        self._field_range(node, fld)
        if not isinstance(v, int) or not is_word(v):
            raise ContractViolation(f"{v!r} is not a 32-bit word")
        absh = self.ghost.abs_heap
        val = value_decode(absh.kinds(node)[fld], v, self.ghost.to_abs, self.mem_lo, self.mem_hi)
        absh.write(node, fld, val)
        self.heap.store(ptr - 4 + 4 * fld, v)
        self._emit("write", {"ptr": ptr, "field": fld, "value": v}, None)
        self._after_op("write")

    def collect(self):
        m = self.collector.collect(self.roots)
        self._emit("collect", {}, m.to_json())
        self._after_op("collect")
        return m

    # -- roots ---------------------------------------------------------------

    def set_root(self, slot: int, v: int) -> None:
        """Store a pointer (canonical or interior) or null in a root slot."""
        self._slot(slot)
        if v:
            self.resolve_root(v)
        self.roots[slot] = v
        self._emit("set_root", {"slot": slot, "value": v}, None)
        self._after_op("set_root")

    def root(self, slot: int) -> int:
        self._slot(slot)
        return self.roots[slot]

    def root_object(self, slot: int) -> int:
        """Canonical pointer of the object a root slot refers to, or 0."""
        v = self.root(slot)
        return self.resolve_root(v) if v else 0

    def root_node(self, slot: int) -> int:
        p = self.root_object(slot)
        return self.ghost.to_abs[p - 4] if p else NO_ABS

    def root_nodes(self) -> List[int]:
        out = []
        for v in self.roots:
            if v:
                out.append(self.ghost.to_abs[self.resolve_root(v) - 4])
        return out

    def resolve_root(self, v: int) -> int:
        try:
            p = self.collector.resolve(v)
        except GCLabError as e:
            raise ContractViolation(f"root value {v:#x} does not address a live object: {e}") from None
        if self.ghost.to_abs[p - 4] == NO_ABS:
            raise ContractViolation(f"root value {v:#x} resolves to a dead object")
        return p

    def _slot(self, slot) -> None:
        if not isinstance(slot, int) or not 0 <= slot < len(self.roots):
            raise ContractViolation(f"root slot {slot!r} outside [0, {len(self.roots)})")

    # -- checks --------------------------------------------------------------

    def check_mutator(self):
        from . import invariants
        self.stats["mutator_checks"] += 1
        return invariants.check_mutator_inv(self)

    def check_gc(self):
        from . import invariants
        return invariants.check_gc_inv(self)

    def live_nodes(self) -> set:
        return set(self.ghost.to_abs.nodes())

    # -- collector observer --------------------------------------------------

    def collection_started(self, collector, roots) -> None:
        self.stats["collections"] += 1
        if self.check_level != "off":
            live = self.ghost.abs_heap.reachable_set(self.root_nodes())
            self._expected_live = live
            self._prev_r2 = RegionMap()

    def step(self, collector, kind: str) -> None:
        if self.check_level != "step":
            return
        from .invariants import CheckReport
        rep = self.check_gc()
        self.stats["gc_step_checks"] += 1
        r2 = self.ghost.r2
        if r2 is not None:
            self.stats["rextend_checks"] += 1
            if not r_extend(self._prev_r2, r2):
                bad = CheckReport()
                bad.add("RExtend", kind, "a previously mapped $r2 entry changed or vanished")
                rep.merge(bad)
            self._prev_r2 = r2.copy()
        self._enforce(rep, f"{kind} step")

    def collection_finished(self, collector, metrics) -> None:
        if self.check_level == "off":
            return
        from . import invariants
        rep = self.check_mutator()
        rep.merge(invariants.check_effectiveness(self, metrics.epoch))
        self.stats["effectiveness_checks"] += 1
        rep.merge(invariants.check_survival(self, self._expected_live))
        self.stats["survival_checks"] += 1
        if collector.name == "marksweep":
            rep.merge(invariants.check_conservation(self, metrics))
            self.stats["conservation_checks"] += 1
        self._enforce(rep, "collection")

    # -- snapshots -----------------------------------------------------------

    def snapshot(self) -> dict:
        return {
            "format": "gclab-snapshot/1",
            "config": self.config.to_json(),
            "heap": self.heap.to_json(),
            "descriptors": self.descriptors.to_json(),
            "ghost": self.ghost.to_json(),
            "collector": self.collector.state_json(),
            "roots": list(self.roots),
        }

    @classmethod
    def from_snapshot(cls, obj: dict) -> "MutatorHandle":
        config = GCConfig.from_json(obj["config"])
        heap = HeapImage.from_json(obj["heap"])
        descriptors = DescriptorTable.from_json(obj["descriptors"], limit=heap.mem_lo)
        ghost = GhostState.from_json(obj["ghost"])
        h = cls(config, heap, descriptors, ghost)
        h.collector = _make_collector(config, heap, descriptors, ghost, h, fresh=False)
        h.collector.load_state(obj["collector"])
        h.roots = [int(r) for r in obj["roots"]]
        return h


def _kstr(kinds) -> str:
    return "".join("p" if k else "." for k in kinds)
