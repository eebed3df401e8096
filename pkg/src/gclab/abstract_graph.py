"""Ghost state: the mutator's abstract object graph and region mappings.

Nothing in this module is consulted by a collector to make a decision; it is
bookkeeping the checkers and the differential harness compare against.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

from .errors import ContractViolation

NO_ABS = 0


@dataclass(frozen=True, slots=True)
class NodeRef:
    node: int

    def to_json(self):
        return ["n", self.node]


@dataclass(frozen=True, slots=True)
class Prim:
    value: int

    def to_json(self):
        return ["p", self.value]


NULL = Prim(0)


def value_from_json(obj) -> "NodeRef | Prim":
    tag, v = obj
    if tag == "n":
        return NodeRef(int(v))
    if tag == "p":
        return Prim(int(v))
    raise ValueError(f"bad abstract value {obj!r}")


def kinds_to_str(kinds: Sequence[bool]) -> str:
    return "".join("p" if k else "." for k in kinds)


def kinds_from_str(s: str) -> Tuple[bool, ...]:
    return tuple(c == "p" for c in s)


class _Node:
    __slots__ = ("kinds", "values")

    def __init__(self, kinds, values):
        self.kinds = kinds
        self.values = values


class AbstractHeap:
    """The abstract heap: node id -> (field kinds, field values).

    ``gc_range`` is the inclusive ``(lo, hi)`` window of words that would be
    interpreted as GC pointers; a ``Prim`` inside it may not be stored in a
    pointer-kind field.  With no window, only ``Prim(0)`` is allowed there.
    """

    def __init__(self, gc_range: Optional[Tuple[int, int]] = None):
        self.gc_range = gc_range
        self.nodes: Dict[int, _Node] = {}
        self.next_id = 1

    def fresh_node(self, num_fields: int, field_kinds: Sequence[bool]) -> int:
        kinds = tuple(bool(k) for k in field_kinds)
        if num_fields < 2 or len(kinds) != num_fields:
            raise ContractViolation(
                f"shape needs >= 2 fields and one kind per field, got {num_fields}/{len(kinds)}")
        if kinds[0] or kinds[1]:
            raise ContractViolation("pre-header and header must be primitive-kind")
        nid = self.next_id
        self.next_id += 1
        self.nodes[nid] = _Node(kinds, [NULL] * num_fields)
        return nid

    def __contains__(self, node) -> bool:
        return node in self.nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def num_fields(self, node: int) -> int:
        return len(self.nodes[node].kinds)

    def kinds(self, node: int) -> Tuple[bool, ...]:
        return self.nodes[node].kinds

    def read(self, node: int, field: int):
        return self.nodes[node].values[field]

    def check_value(self, node: int, field: int, value) -> None:
        n = self.nodes.get(node)
        if n is None:
            raise ContractViolation(f"no abstract node {node}")
        if not 2 <= field < len(n.kinds):
            raise ContractViolation(f"field {field} out of range for node {node}")
        if type(value) is NodeRef:
            if not n.kinds[field]:
                raise ContractViolation(f"node reference into primitive field {field} of {node}")
            if value.node not in self.nodes:
                raise ContractViolation(f"reference to unknown node {value.node}")
        elif type(value) is Prim:
            if n.kinds[field] and value.value != 0:
                rng = self.gc_range
                if rng is None or rng[0] <= value.value <= rng[1]:
                    raise ContractViolation(
                        f"primitive {value.value} into pointer field {field} of {node}")
        else:
            raise ContractViolation(f"not an abstract value: {value!r}")

    def write(self, node: int, field: int, value) -> None:
        self.check_value(node, field, value)
        self.nodes[node].values[field] = value

    def children(self, node: int) -> Iterator[int]:
        for v in self.nodes[node].values:
            if type(v) is NodeRef:
                yield v.node

    def reachable_set(self, roots: Iterable[int]) -> set:
        """Least fixed point of roots under NodeRef fields (explicit worklist)."""
        nodes = self.nodes
        seen = set()
        work = []
        for r in roots:
            if r == NO_ABS or r is None:
                continue
            if r not in nodes:
                raise ContractViolation(f"root {r} is not an abstract node")
            if r not in seen:
                seen.add(r)
                work.append(r)
        while work:
            n = work.pop()
            for v in nodes[n].values:
                if type(v) is NodeRef and v.node not in seen:
                    seen.add(v.node)
                    work.append(v.node)
        return seen

    def size_bytes(self, node: int) -> int:
        return 4 * len(self.nodes[node].kinds)

    def copy(self) -> "AbstractHeap":
        h = AbstractHeap(self.gc_range)
        h.next_id = self.next_id
        h.nodes = {k: _Node(n.kinds, list(n.values)) for k, n in self.nodes.items()}
        return h

    def to_json(self) -> dict:
        return {
            "gc_range": list(self.gc_range) if self.gc_range else None,
            "next_id": self.next_id,
            "nodes": {
                str(k): {"kinds": kinds_to_str(n.kinds), "values": [v.to_json() for v in n.values]}
                for k, n in self.nodes.items()
            },
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AbstractHeap":
        h = cls(tuple(obj["gc_range"]) if obj.get("gc_range") else None)
        h.next_id = int(obj["next_id"])
        for k, n in obj["nodes"].items():
            h.nodes[int(k)] = _Node(kinds_from_str(n["kinds"]),
                                    [value_from_json(v) for v in n["values"]])
        return h


class RegionMap:
    """Concrete address -> abstract node; unmapped addresses read as NO_ABS."""

    __slots__ = ("map",)

    def __init__(self, mapping: Optional[Dict[int, int]] = None):
        self.map: Dict[int, int] = dict(mapping) if mapping else {}

    def __getitem__(self, addr: int) -> int:
        return self.map.get(addr, NO_ABS)

    def __setitem__(self, addr: int, node: int) -> None:
        if node == NO_ABS:
            self.map.pop(addr, None)
        else:
            self.map[addr] = node

    def __contains__(self, addr) -> bool:
        return addr in self.map

    def __len__(self) -> int:
        return len(self.map)

    def __eq__(self, other) -> bool:
        return isinstance(other, RegionMap) and self.map == other.map

    def items(self):
        return self.map.items()

    def addresses(self):
        return self.map.keys()

    def nodes(self):
        return self.map.values()

    def copy(self) -> "RegionMap":
        return RegionMap(self.map)

    def restrict(self, addrs: Iterable[int]) -> "RegionMap":
        m = self.map
        return RegionMap({a: m[a] for a in addrs if a in m})

    def inverse(self) -> Dict[int, int]:
        return {n: a for a, n in self.map.items()}

    def to_json(self) -> dict:
        return {str(a): n for a, n in sorted(self.map.items())}

    @classmethod
    def from_json(cls, obj: dict) -> "RegionMap":
        return cls({int(a): int(n) for a, n in obj.items()})


def well_formed(r: RegionMap) -> bool:
    """Injective on the addresses that are mapped to a node."""
    return len(set(r.map.values())) == len(r.map)


def duplicate_nodes(r: RegionMap) -> List[Tuple[int, List[int]]]:
    by_node: Dict[int, List[int]] = {}
    for a, n in r.map.items():
        by_node.setdefault(n, []).append(a)
    return [(n, sorted(a)) for n, a in by_node.items() if len(a) > 1]


def r_extend(r_old: RegionMap, r_new: RegionMap) -> bool:
    """Every mapping of ``r_old`` survives unchanged in ``r_new``."""
    new = r_new.map
    return all(new.get(a) == n for a, n in r_old.map.items())


class ReachedRecord:
    """Append-only record of (node, epoch) pairs reached during collections."""

    def __init__(self):
        self.epoch = 0
        self.entries: set = set()

    def advance(self) -> int:
        self.epoch += 1
        return self.epoch

    def record(self, node: int) -> None:
        self.entries.add((node, self.epoch))

    def reached_since(self, node: int, epoch: int) -> bool:
        return (node, epoch) in self.entries

    def to_json(self) -> dict:
        return {"epoch": self.epoch, "entries": sorted([n, e] for n, e in self.entries)}

    @classmethod
    def from_json(cls, obj: dict) -> "ReachedRecord":
        r = cls()
        r.epoch = int(obj["epoch"])
        r.entries = {(int(n), int(e)) for n, e in obj["entries"]}
        return r
