"""Plant a tracing bug, watch the checker catch it, then shrink the trace.

The injected collector forgets the last pointer field of every object, so
anything reachable only through such a field gets swept while still live.
"""

from gclab.harness.workload import differential, generate, shrink
from gclab.mutator import GCConfig

FAULT = "lossy-trace"


def fails(trace):
    return not differential(trace, ["marksweep"], fault=FAULT).passed


def main():
    trace = generate(7, 600, "weave", GCConfig(heap_bytes=4096, root_slots=8))
    print("healthy collector:", "ok" if differential(trace, ["marksweep"]).passed else "FAILED")
    bad = differential(trace, ["marksweep"], fault=FAULT)
    first = bad.report.first()
    print(f"{FAULT} collector: {first.predicate} -> {first.detail}")

    small = shrink(trace, fails)
    print(f"\nshrunk {len(trace)} ops to {len(small)}:")
    for op in small.ops:
        print("  ", op)
    print("\nreplaying the minimized trace:", differential(small, ["marksweep"], fault=FAULT)
          .report.first().detail)


if __name__ == "__main__":
    main()
