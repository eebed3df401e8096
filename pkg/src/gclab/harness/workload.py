"""Seeded mutator workloads replayed differentially against an abstract oracle.

A trace is a list of small JSON-friendly op dicts::

    {"op": "alloc", "slot": s, "kinds": "..pp."}
    {"op": "read",  "slot": s, "path": [f1, ..., fk]}
    {"op": "write", "slot": s, "path": [f1, ..., fk], "src": ["root", t] | ["null"] | ["prim", v]}
    {"op": "drop",  "slot": s}
    {"op": "dup",   "src": a, "dst": b, "offset": k}
    {"op": "collect"}

A path starts at the object a root slot refers to, follows pointer fields
``f1..f(k-1)`` and names field ``fk`` as the one read or written.  Every op is
validated against an abstract model before it reaches a backend; ops that are
invalid at that point (for instance after shrinking removed an allocation)
are recorded as skipped on every backend alike.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

from ..abstract_graph import NULL, AbstractHeap, NodeRef, Prim, kinds_from_str, kinds_to_str
from ..errors import ContractViolation, GCLabError, InvariantViolation, OutOfMemory
from ..heap_model import DENSE_MAX_FIELD
from ..invariants import CheckReport
from ..mutator import GCConfig, initialize
from .reference import RefCopy, RefMarkSweep

PROFILES = ("churn", "binder", "weave", "mini")
PRACTICAL = ("marksweep", "copying")
REFERENCE = ("ref-ms", "ref-copy")
BACKENDS = PRACTICAL + REFERENCE
MINI_KINDS = "..pp"
TRACE_FORMAT = "gclab-trace/1"
OBS_FORMAT = "gclab-observations/1"


# -- traces -----------------------------------------------------------------------


@dataclass
class WorkloadTrace:
    seed: int
    profile: str
    ops: List[dict]
    config: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.ops)

    def gc_config(self, **overrides) -> GCConfig:
        cfg = {**self.config, **overrides}
        return GCConfig.from_json(cfg)

    def with_ops(self, ops: List[dict]) -> "WorkloadTrace":
        return WorkloadTrace(self.seed, self.profile, list(ops), dict(self.config))

    def dumps(self) -> str:
        head = {"format": TRACE_FORMAT, "seed": self.seed, "profile": self.profile,
                "n": len(self.ops), "config": self.config}
        lines = [json.dumps(head, sort_keys=True)]
        lines += [json.dumps(op, sort_keys=True) for op in self.ops]
        return "\n".join(lines) + "\n"

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "WorkloadTrace":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty trace file")
        head = json.loads(lines[0])
        if head.get("format") != TRACE_FORMAT:
            raise ValueError(f"not a trace file (format {head.get('format')!r})")
        return cls(int(head["seed"]), head.get("profile", "churn"),
                   [json.loads(ln) for ln in lines[1:]], head.get("config", {}))

    @classmethod
    def load(cls, path: str) -> "WorkloadTrace":
        with open(path, encoding="utf-8") as f:
            return cls.loads(f.read())


# -- abstract model ---------------------------------------------------------------


class AbstractModel:
    """Pure abstract-graph oracle with root slots holding (node, byte offset)."""

    def __init__(self, root_slots: int, gc_range: Tuple[int, int]):
        self.heap = AbstractHeap(gc_range=gc_range)
        self.roots: List[Optional[Tuple[int, int]]] = [None] * root_slots

    def root_node(self, slot: int) -> Optional[int]:
        r = self.roots[slot]
        return r[0] if r else None

    def live(self) -> set:
        return self.heap.reachable_set(r[0] for r in self.roots if r)

    def live_bytes(self) -> int:
        h = self.heap
        return sum(h.size_bytes(n) for n in self.live())

    def _slot_ok(self, s) -> bool:
        return isinstance(s, int) and 0 <= s < len(self.roots)

    def target(self, slot: int, path: Sequence[int]) -> Optional[Tuple[int, int]]:
        """(node, field) named by a path, or None if the path is invalid."""
        if not self._slot_ok(slot) or not path or self.roots[slot] is None:
            return None
        nodes = self.heap.nodes
        node = self.roots[slot][0]
        for f in path[:-1]:
            n = nodes[node]
            if not isinstance(f, int) or not 2 <= f < len(n.kinds) or not n.kinds[f]:
                return None
            v = n.values[f]
            if type(v) is not NodeRef:
                return None
            node = v.node
        f = path[-1]
        if not isinstance(f, int) or not 2 <= f < len(nodes[node].kinds):
            return None
        return node, f

    def source_value(self, src):
        kind = src[0]
        if kind == "root":
            if not self._slot_ok(src[1]) or self.roots[src[1]] is None:
                return None
            return NodeRef(self.roots[src[1]][0])
        if kind == "null":
            return NULL
        if kind == "prim":
            return Prim(int(src[1]))
        return None

    def validate(self, op: dict) -> bool:
        kind = op.get("op")
        if kind == "alloc":
            if not self._slot_ok(op.get("slot")):
                return False
            k = kinds_from_str(op.get("kinds", ""))
            return len(k) >= 2 and not k[0] and not k[1]
        if kind == "read":
            return self.target(op.get("slot"), op.get("path") or []) is not None
        if kind == "write":
            t = self.target(op.get("slot"), op.get("path") or [])
            if t is None:
                return False
            v = self.source_value(op.get("src") or ["?"])
            if v is None:
                return False
            try:
                self.heap.check_value(t[0], t[1], v)
            except ContractViolation:
                return False
            if type(v) is Prim and not 0 <= v.value <= 0xFFFFFFFF:
                return False
            return True
        if kind == "drop":
            return self._slot_ok(op.get("slot"))
        if kind == "dup":
            s, d, off = op.get("src"), op.get("dst"), op.get("offset", 0)
            if not (self._slot_ok(s) and self._slot_ok(d)) or not isinstance(off, int):
                return False
            r = self.roots[s]
            if r is None:
                return off == 0
            size = self.heap.size_bytes(r[0])
            return off % 4 == 0 and 0 <= off <= size - 4
        return kind == "collect"

    def apply(self, op: dict):
        """Execute a validated op; returns the expected observation."""
        kind = op["op"]
        if kind == "alloc":
            k = kinds_from_str(op["kinds"])
            node = self.heap.fresh_node(len(k), k)
            self.roots[op["slot"]] = (node, 0)
            return ["alloc", node]
        if kind == "read":
            node, f = self.target(op["slot"], op["path"])
            return ["read", self.heap.read(node, f).to_json()]
        if kind == "write":
            node, f = self.target(op["slot"], op["path"])
            self.heap.write(node, f, self.source_value(op["src"]))
            return ["write"]
        if kind == "drop":
            self.roots[op["slot"]] = None
            return ["ok"]
        if kind == "dup":
            r = self.roots[op["src"]]
            self.roots[op["dst"]] = (r[0], op.get("offset", 0)) if r else None
            return ["ok"]
        return ["collect", sorted(self.live())]


# -- backends ---------------------------------------------------------------------


class PracticalBackend:
    """Drives a MutatorHandle from trace ops."""

    def __init__(self, config: GCConfig, fault: Optional[str] = None):
        self.name = config.collector
        self.h = initialize(config)
        if fault:
            from .faults import inject
            inject(self.h, fault)

    def stats(self) -> dict:
        return dict(self.h.stats)

    @property
    def metrics(self):
        return self.h.metrics

    def _walk(self, slot: int, path: Sequence[int]) -> int:
        h = self.h
        p = h.root_object(slot)
        for f in path:
            p = h.read_field(p, f)
        return p

    def execute(self, op: dict):
        h = self.h
        kind = op["op"]
        if kind == "alloc":
            ptr, node = h.alloc(kinds_from_str(op["kinds"]))
            h.set_root(op["slot"], ptr)
            return ["alloc", node]
        if kind == "read":
            p = self._walk(op["slot"], op["path"][:-1])
            return ["read", h.read_value(p, op["path"][-1]).to_json()]
        if kind == "write":
            p = self._walk(op["slot"], op["path"][:-1])
            src = op["src"]
            if src[0] == "root":
                w = h.root_object(src[1])
            elif src[0] == "prim":
                w = int(src[1])
            else:
                w = 0
            h.write_field(p, op["path"][-1], w)
            return ["write"]
        if kind == "drop":
            h.set_root(op["slot"], 0)
            return ["ok"]
        if kind == "dup":
            p = h.root_object(op["src"])
            h.set_root(op["dst"], p + op.get("offset", 0) if p else 0)
            return ["ok"]
        h.collect()
        return ["collect", sorted(h.live_nodes())]

    def capacity_bytes(self) -> int:
        c = self.h.config
        return c.heap_bytes // 2 if c.collector == "copying" else c.heap_bytes


class MiniBackend:
    """Drives a miniature reference collector; only two-pointer-field objects."""

    def __init__(self, name: str, config: GCConfig):
        self.name = name
        objects = config.heap_bytes // 16
        self.c = RefMarkSweep(objects) if name == "ref-ms" else RefCopy(objects // 2)
        self.roots = [0] * config.root_slots
        self.object_bytes = 16

    def stats(self) -> dict:
        return {"collections": self.c.collections}

    @property
    def metrics(self):
        return []

    def _walk(self, slot, path) -> int:
        p = self.roots[slot]
        for f in path:
            p = self.c.read_field(p, f - 2)
        return p

    def execute(self, op: dict):
        c = self.c
        kind = op["op"]
        if kind == "alloc":
            if op["kinds"] != MINI_KINDS:
                raise ContractViolation(f"miniature heaps only hold {MINI_KINDS!r} objects")
            ptr, node = c.alloc(self.roots)
            self.roots[op["slot"]] = ptr
            return ["alloc", node]
        if kind == "read":
            p = self._walk(op["slot"], op["path"][:-1])
            v = c.read_field(p, op["path"][-1] - 2)
            return ["read", NodeRef(c.to_abs[v]).to_json()]
        if kind == "write":
            src = op["src"]
            if src[0] != "root":
                raise ContractViolation("miniature fields always hold object pointers")
            p = self._walk(op["slot"], op["path"][:-1])
            c.write_field(p, op["path"][-1] - 2, self.roots[src[1]])
            return ["write"]
        if kind == "drop":
            self.roots[op["slot"]] = 0
            return ["ok"]
        if kind == "dup":
            if op.get("offset", 0):
                raise ContractViolation("miniature heaps have no interior pointers")
            self.roots[op["dst"]] = self.roots[op["src"]]
            return ["ok"]
        c.collect(self.roots)
        rep = c.check()
        if not rep.passed:
            raise InvariantViolation(rep, "collection")
        return ["collect", sorted(c.live_nodes())]

    def capacity_bytes(self) -> int:
        return (self.c.mem_hi - self.c.mem_lo) * self.object_bytes // (2 if self.name == "ref-copy" else 1)


def make_backend(name: str, config: GCConfig, fault: Optional[str] = None):
    if name in PRACTICAL:
        cfg = GCConfig.from_json({**config.to_json(), "collector": name})
        return PracticalBackend(cfg.validate(), fault)
    if fault:
        raise GCLabError("faults can only be injected into the practical collectors")
    if name in REFERENCE:
        return MiniBackend(name, config)
    raise GCLabError(f"unknown backend {name!r}")


# -- observation logs -------------------------------------------------------------


@dataclass
class ObservationLog:
    backend: str
    entries: List[list] = field(default_factory=list)
    status: str = "ok"  # ok | oom | violation | error
    report: Optional[CheckReport] = None
    detail: str = ""
    stats: dict = field(default_factory=dict)
    metrics: list = field(default_factory=list)

    def dumps(self) -> str:
        head = {"format": OBS_FORMAT, "backend": self.backend, "status": self.status,
                "detail": self.detail, "n": len(self.entries)}
        lines = [json.dumps(head, sort_keys=True)]
        lines += [json.dumps({"i": i, "obs": e}, sort_keys=True) for i, e in enumerate(self.entries)]
        return "\n".join(lines) + "\n"

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.dumps())


@dataclass
class DifferentialResult:
    report: CheckReport
    logs: Dict[str, ObservationLog]
    oracle: List[list]
    divergences: int = 0
    violations: int = 0

    @property
    def passed(self) -> bool:
        return self.report.passed


def _backend_failure(log: ObservationLog, exc: Exception, i: int) -> None:
    if isinstance(exc, InvariantViolation):
        log.status = "violation"
        log.report = exc.report
    else:
        log.status = "error"
        log.report = CheckReport()
        log.report.add(type(exc).__name__, i, str(exc))
    log.detail = f"op {i}: {exc}"


def differential(trace: WorkloadTrace, backends: Sequence[str] = PRACTICAL,
                 check: Optional[str] = None, config_overrides: Optional[dict] = None,
                 oom_floor: float = 0.25, fault: Optional[str] = None) -> DifferentialResult:
    """Run a trace on the abstract model and each backend in lockstep.

    Divergences and invariant violations are reported; an OutOfMemory ends
    that backend's run and counts as a divergence only when the oracle's live
    bytes plus the request were below ``oom_floor`` of the backend's capacity.
    """
    overrides = dict(config_overrides or {})
    if check is not None:
        overrides["check"] = check
    cfg = trace.gc_config(**overrides)
    model = AbstractModel(cfg.root_slots, (cfg.mem_lo, cfg.mem_hi))
    active = {}
    logs = {}
    for name in backends:
        logs[name] = ObservationLog(name)
        active[name] = make_backend(name, cfg, fault)
    instances = dict(active)
    oracle: List[list] = []
    rep = CheckReport()
    result = DifferentialResult(rep, logs, oracle)
    for i, op in enumerate(trace.ops):
        if not model.validate(op):
            oracle.append(["skip"])
            for name in active:
                logs[name].entries.append(["skip"])
            continue
        for name in list(active):
            b, log = active[name], logs[name]
            try:
                got = b.execute(op)
            except OutOfMemory as e:
                live = model.live_bytes()
                need = 4 * len(op.get("kinds", ""))
                log.entries.append(["oom", live])
                log.status, log.detail = "oom", f"op {i}: {e}"
                if live + need < oom_floor * b.capacity_bytes():
                    rep.add("Divergence", i, f"{name}: out of memory with only {live} live bytes")
                    result.divergences += 1
                del active[name]
                continue
            except GCLabError as e:
                _backend_failure(log, e, i)
                rep.add(f"{name}:{log.report.first().predicate}" if log.report.violations else name,
                        i, log.detail)
                result.violations += 1
                del active[name]
                continue
            log.entries.append(got)
        expect = model.apply(op)
        oracle.append(expect)
        for name in list(active):
            got = logs[name].entries[-1]
            if got != expect:
                rep.add("Divergence", i, f"{name} observed {got}, abstract model says {expect}")
                result.divergences += 1
                logs[name].status = "diverged"
                logs[name].detail = f"op {i}: observed {got}, expected {expect}"
                del active[name]
        if not active and backends:
            break
    for name, b in instances.items():
        logs[name].stats = b.stats()
        logs[name].metrics = list(b.metrics)
    return result


def run(trace: WorkloadTrace, backend: str, check: Optional[str] = None,
        config_overrides: Optional[dict] = None, fault: Optional[str] = None) -> ObservationLog:
    """Replay a trace on one backend, returning its observation log."""
    overrides = dict(config_overrides or {})
    if check is not None:
        overrides["check"] = check
    cfg = trace.gc_config(**overrides)
    model = AbstractModel(cfg.root_slots, (cfg.mem_lo, cfg.mem_hi))
    b = make_backend(backend, cfg, fault)
    log = ObservationLog(backend)
    for i, op in enumerate(trace.ops):
        if not model.validate(op):
            log.entries.append(["skip"])
            continue
        try:
            log.entries.append(b.execute(op))
        except OutOfMemory as e:
            log.entries.append(["oom", model.live_bytes()])
            log.status, log.detail = "oom", f"op {i}: {e}"
            break
        except GCLabError as e:
            _backend_failure(log, e, i)
            break
        model.apply(op)
    log.stats = b.stats()
    log.metrics = list(b.metrics)
    return log


# -- generation -------------------------------------------------------------------

_WEIGHTS = {
    #           alloc read write drop dup collect
    "churn":  (34, 22, 16, 16, 10, 0.1),
    "binder": (24, 30, 24, 8, 12, 0.1),
    "weave":  (14, 30, 38, 7, 10, 0.1),
    "mini":   (24, 28, 26, 10, 10, 0.2),
}
_OPS = ("alloc", "read", "write", "drop", "dup", "collect")


def _random_kinds(rng: random.Random, profile: str, heap_bytes: int) -> str:
    if profile == "mini":
        return MINI_KINDS
    if profile == "churn":
        if rng.random() < 0.03:
            n = rng.randint(48, max(48, min(96, heap_bytes // 64)))
        else:
            n = rng.randint(2, 14)
        p_ptr = 0.4
    elif profile == "binder":
        n = rng.randint(3, 8)
        p_ptr = 0.35
    else:
        n = rng.randint(3, 12)
        p_ptr = 0.7
    kinds = [False, False]
    for j in range(2, n):
        kinds.append(j < DENSE_MAX_FIELD and rng.random() < p_ptr)
    if profile != "churn" and n > 2 and not any(kinds):
        kinds[2] = True
    return kinds_to_str(kinds)


class _Generator:
    def __init__(self, seed: int, profile: str, cfg: GCConfig):
        self.rng = random.Random(f"gclab:{profile}:{seed}")
        self.profile = profile
        self.cfg = cfg
        self.model = AbstractModel(cfg.root_slots, (cfg.mem_lo, cfg.mem_hi))
        self.budget = cfg.heap_bytes // 8
        self.ops: List[dict] = []
        self.since_census = 0
        self.estimate = 0
        self.chain_slot = 0

    def emit(self, op: dict) -> None:
        m = self.model
        assert m.validate(op), op
        m.apply(op)
        self.ops.append(op)

    def live_slots(self) -> List[int]:
        return [i for i, r in enumerate(self.model.roots) if r is not None]

    def random_path(self, slot: int, write: bool) -> Optional[List[int]]:
        rng, heap = self.rng, self.model.heap
        node = self.model.roots[slot][0]
        path: List[int] = []
        depth = rng.choice((0, 0, 1, 1, 2, 3, 5))
        for _ in range(depth):
            n = heap.nodes[node]
            hops = [j for j in range(2, len(n.kinds)) if type(n.values[j]) is NodeRef]
            if not hops:
                break
            j = rng.choice(hops)
            path.append(j)
            node = n.values[j].node
        n = heap.nodes[node]
        if len(n.kinds) <= 2:
            return None
        if self.profile == "mini":
            fields = [2, 3]
        elif write and rng.random() < 0.75:
            fields = [j for j in range(2, len(n.kinds)) if n.kinds[j]] or list(range(2, len(n.kinds)))
        else:
            fields = list(range(2, len(n.kinds)))
        path.append(rng.choice(fields))
        return path

    def census(self) -> None:
        self.estimate = self.model.live_bytes()
        self.since_census = 0

    def enforce_budget(self) -> None:
        if self.since_census >= 48 or self.estimate > self.budget:
            self.census()
        while self.estimate > self.budget:
            slots = self.live_slots()
            if not slots:
                break
            self.emit({"op": "drop", "slot": self.rng.choice(slots)})
            self.census()

    def step(self) -> None:
        rng, m = self.rng, self.model
        self.since_census += 1
        choice = rng.choices(_OPS, weights=_WEIGHTS[self.profile])[0]
        slots = self.live_slots()
        nslots = len(m.roots)
        if choice != "alloc" and choice != "collect" and not slots:
            choice = "alloc"
        if choice == "alloc":
            kinds = _random_kinds(rng, self.profile, self.cfg.heap_bytes)
            if self.profile == "binder" and slots and rng.random() < 0.8:
                self._bind(kinds)
                return
            slot = rng.randrange(nslots)
            self.emit({"op": "alloc", "slot": slot, "kinds": kinds})
            self.estimate += 2 * len(kinds)
            if self.profile == "mini":
                for f in (2, 3):
                    self.emit({"op": "write", "slot": slot, "path": [f], "src": ["root", slot]})
        elif choice == "read":
            slot = rng.choice(slots)
            path = self.random_path(slot, write=False)
            if path:
                self.emit({"op": "read", "slot": slot, "path": path})
        elif choice == "write":
            slot = rng.choice(slots)
            path = self.random_path(slot, write=True)
            if path:
                node, f = m.target(slot, path)
                self.emit({"op": "write", "slot": slot, "path": path,
                           "src": self._source(m.heap.kinds(node)[f], slots)})
        elif choice == "drop":
            self.emit({"op": "drop", "slot": rng.choice(slots)})
        elif choice == "dup":
            src = rng.choice(slots)
            off = 0
            if self.profile != "mini" and rng.random() < 0.3:
                size = m.heap.size_bytes(m.roots[src][0])
                off = 4 * rng.randrange(size // 4)
            self.emit({"op": "dup", "src": src, "dst": rng.randrange(nslots), "offset": off})
        else:
            self.emit({"op": "collect"})
        self.enforce_budget()

    def _source(self, is_ptr: bool, slots: List[int]):
        rng = self.rng
        if self.profile == "mini":
            return ["root", rng.choice(slots)]
        if is_ptr:
            r = rng.random()
            if r < 0.8:
                return ["root", rng.choice(slots)]
            if r < 0.93:
                return ["null"]
            return ["prim", rng.randrange(1, self.cfg.mem_lo)]
        return ["prim", rng.getrandbits(32)]

    def _bind(self, kinds: str) -> None:
        """Allocate a node and hang the current chain off its first pointer field."""
        rng, m = self.rng, self.model
        chain = self.chain_slot
        tmp = (chain + 1 + rng.randrange(len(m.roots) - 1)) % len(m.roots) if len(m.roots) > 1 else chain
        if m.roots[chain] is None or tmp == chain:
            self.emit({"op": "alloc", "slot": chain, "kinds": kinds})
            self.estimate += 2 * len(kinds)
            return
        self.emit({"op": "alloc", "slot": tmp, "kinds": kinds})
        self.estimate += 2 * len(kinds)
        ptrs = [j for j, c in enumerate(kinds) if c == "p"]
        if ptrs:
            self.emit({"op": "write", "slot": tmp, "path": [ptrs[0]], "src": ["root", chain]})
        self.emit({"op": "dup", "src": tmp, "dst": chain, "offset": 0})
        if rng.random() < 0.05:
            self.chain_slot = rng.randrange(len(m.roots))


def generate(seed: int, n: int, profile: str = "churn",
             config: Optional[GCConfig] = None) -> WorkloadTrace:
    """Deterministic trace of exactly ``n`` ops for (seed, n, profile, config)."""
    if profile not in PROFILES:
        raise GCLabError(f"unknown profile {profile!r}")
    cfg = config or GCConfig()
    g = _Generator(seed, profile, cfg)
    while len(g.ops) < n:
        g.step()
    cfg_json = cfg.to_json()
    return WorkloadTrace(seed, profile, g.ops[:n], cfg_json)


# -- shrinking --------------------------------------------------------------------


def shrink(trace: WorkloadTrace, fails: Callable[[WorkloadTrace], bool],
           max_rounds: int = 50) -> WorkloadTrace:
    """Greedy op deletion: drop chunks, then single ops, while ``fails`` holds."""
    ops = list(trace.ops)
    if not fails(trace.with_ops(ops)):
        return trace
    chunk = max(1, len(ops) // 2)
    rounds = 0
    while chunk >= 1 and rounds < max_rounds:
        rounds += 1
        i = 0
        changed = False
        while i < len(ops):
            cand = ops[:i] + ops[i + chunk:]
            if cand and fails(trace.with_ops(cand)):
                ops = cand
                changed = True
            else:
                i += chunk
        if not changed:
            if chunk == 1:
                break
            chunk //= 2
    return trace.with_ops(ops)
