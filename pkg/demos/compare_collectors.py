"""Run one workload on both collectors and print what each collection did.

    python demos/compare_collectors.py [profile] [seed]
"""

import sys

from gclab.harness.workload import differential, generate
from gclab.mutator import GCConfig


def main(profile="churn", seed=1):
    trace = generate(seed, 6000, profile, GCConfig(heap_bytes=16384))
    result = differential(trace)
    print(f"{profile} seed={seed}: {'agrees with the abstract graph' if result.passed else 'FAILED'}")
    for name, log in result.logs.items():
        print(f"\n{name}: {log.stats['collections']} collections, status {log.status}")
        print(f"{'epoch':>5} {'live':>7} {'freed/copied':>12} {'steps':>6} {'entries':>7} {'occ%':>6}")
        for m in log.metrics[:12]:
            print(f"{m.epoch:>5} {m.live_bytes:>7} {m.freed_or_copied_bytes:>12} {m.pause_steps:>6} "
                  f"{m.free_list_entries:>7} {m.occupancy_pct:>6.1f}")
        if len(log.metrics) > 12:
            print(f"  ... {len(log.metrics) - 12} more")
    ms = result.logs["marksweep"].metrics
    if ms:
        frag = sum(m.fragment_bytes for m in ms) / len(ms)
        print(f"\nmark-sweep leaves {frag:.0f} bytes per collection in unlisted fragments")


if __name__ == "__main__":
    args = sys.argv[1:]
    main(args[0] if args else "churn", int(args[1]) if len(args) > 1 else 1)
