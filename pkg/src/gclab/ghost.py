"""Ghost state shared by a handle with its collector and checkers."""

from __future__ import annotations

from typing import Optional

from .abstract_graph import AbstractHeap, ReachedRecord, RegionMap


class GhostState:
    """$AbsMem, $toAbs, the collection regions $r1/$r2 and the reached record.

    ``r1``/``r2`` are ``None`` outside a collection.
    """

    def __init__(self, abs_heap: AbstractHeap):
        self.abs_heap = abs_heap
        self.to_abs = RegionMap()
        self.r1: Optional[RegionMap] = None
        self.r2: Optional[RegionMap] = None
        self.reached = ReachedRecord()

    @property
    def collecting(self) -> bool:
        return self.r1 is not None

    def to_json(self) -> dict:
        return {
            "abs_heap": self.abs_heap.to_json(),
            "to_abs": self.to_abs.to_json(),
            "r1": self.r1.to_json() if self.r1 is not None else None,
            "r2": self.r2.to_json() if self.r2 is not None else None,
            "reached": self.reached.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GhostState":
        g = cls(AbstractHeap.from_json(obj["abs_heap"]))
        g.to_abs = RegionMap.from_json(obj["to_abs"])
        g.r1 = RegionMap.from_json(obj["r1"]) if obj.get("r1") is not None else None
        g.r2 = RegionMap.from_json(obj["r2"]) if obj.get("r2") is not None else None
        g.reached = ReachedRecord.from_json(obj["reached"])
        return g


class NullObserver:
    """Collector observer that ignores every event."""

    def collection_started(self, collector, roots):
        pass

    def step(self, collector, kind):
        pass

    def collection_finished(self, collector, metrics):
        pass
