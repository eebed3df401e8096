"""Deliberately broken collector variants for exercising the checkers."""

from __future__ import annotations

from ..errors import GCLabError


class LossyDescriptors:
    """Descriptor view that hides the last pointer field of every shape.

    Handed to a collector (never to the checker), it makes tracing skip that
    field: mark-sweep frees objects reachable only through it, and the
    copying collector leaves it pointing into the old from-space.
    """

    def __init__(self, table):
        self.table = table
        self._cache = {}

    def __getattr__(self, name):
        return getattr(self.table, name)

    def layout(self, header):
        hit = self._cache.get(header)
        if hit is None:
            n, kinds = self.table.layout(header)
            kinds = list(kinds)
            for j in range(n - 1, 1, -1):
                if kinds[j]:
                    kinds[j] = False
                    break
            hit = self._cache[header] = (n, tuple(kinds))
        return hit


def _lossy_trace(handle) -> None:
    handle.collector.descriptors = LossyDescriptors(handle.descriptors)


FAULTS = {"lossy-trace": _lossy_trace}


def inject(handle, name: str) -> None:
    try:
        FAULTS[name](handle)
    except KeyError:
        raise GCLabError(f"unknown fault {name!r}; known: {sorted(FAULTS)}") from None
