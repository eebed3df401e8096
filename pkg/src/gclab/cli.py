"""Command-line front end: ``gclab run | replay | check``.

Exit codes: 0 success, 1 bad configuration, 2 invariant violation or
observation divergence, 3 out of memory (only with ``--strict-oom``).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from typing import List, Optional

from .errors import ConfigError, GCLabError
from .harness.faults import FAULTS
from .harness.workload import (BACKENDS, PROFILES, REFERENCE, WorkloadTrace, differential,
                               generate)
from .invariants import check_phase
from .mutator import CHECK_LEVELS, GCConfig, MutatorHandle

EXIT_OK, EXIT_CONFIG, EXIT_VIOLATION, EXIT_OOM = 0, 1, 2, 3
METRIC_COLUMNS = ["epoch", "liveBytes", "freedOrCopiedBytes", "pauseSteps",
                  "freeListEntries", "occupancyPct"]

RUN_DEFAULTS = {
    "collector": "marksweep", "heap": 65536, "seed": 1, "ops": 10000, "profile": "churn",
    "check": "gc", "root_slots": 64, "mem_lo": 4096,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_CONFIG)


def _add_common(p: argparse.ArgumentParser, with_workload: bool) -> None:
    p.add_argument("--config", help="JSON file with option values; flags take precedence")
    p.add_argument("--collector", choices=BACKENDS)
    p.add_argument("--heap", type=int, help="GC-space size in bytes")
    p.add_argument("--mem-lo", type=int, dest="mem_lo", help="first heap address")
    p.add_argument("--check", choices=CHECK_LEVELS, help="invariant checking intensity")
    p.add_argument("--root-slots", type=int, dest="root_slots")
    if with_workload:
        p.add_argument("--seed", type=int)
        p.add_argument("--ops", type=int, help="number of workload ops")
        p.add_argument("--profile", choices=PROFILES)
        p.add_argument("--trace-out", dest="trace_out", help="write the generated trace here")
    p.add_argument("--metrics", help="write per-collection metrics CSV here")
    p.add_argument("--observations", help="write the observation log (JSON lines) here")
    p.add_argument("--report", help="write the failure report (JSON) here")
    p.add_argument("--strict-oom", action="store_true", dest="strict_oom",
                   help="exit 3 when the run ends in OutOfMemory")
    p.add_argument("--inject-fault", dest="inject_fault", choices=sorted(FAULTS),
                   help="run a deliberately broken collector (checker testing)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gclab", description="Run and check simulated garbage collectors.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    _add_common(sub.add_parser("run", help="generate a workload and run it"), True)
    rp = sub.add_parser("replay", help="replay a saved trace file")
    rp.add_argument("trace")
    _add_common(rp, False)
    cp = sub.add_parser("check", help="check a heap snapshot file")
    cp.add_argument("snapshot")
    cp.add_argument("--report", help="write the check report (JSON) here")
    return parser


def _resolve(args, base: dict) -> dict:
    """defaults < trace/config file < GCLAB_CHECK < explicit flags."""
    opts = dict(base)
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as f:
                loaded = json.load(f)
        except (OSError, ValueError) as e:
            raise ConfigError(f"cannot read config {args.config}: {e}")
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        for k, v in loaded.items():
            opts[k.replace("-", "_")] = v
    env = os.environ.get("GCLAB_CHECK")
    if env:
        opts["check"] = env
    for k, v in vars(args).items():
        if v is not None and k not in ("command", "config", "trace", "snapshot"):
            opts[k] = v
    return opts


def _gc_config(opts: dict) -> GCConfig:
    collector = opts["collector"]
    if collector not in BACKENDS:
        raise ConfigError(f"unknown collector {collector!r}")
    try:
        cfg = GCConfig(collector="marksweep" if collector in REFERENCE else collector,
                       heap_bytes=int(opts["heap"]), mem_lo=int(opts.get("mem_lo", 4096)),
                       root_slots=int(opts["root_slots"]), check=opts["check"])
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e))
    cfg.validate()
    if collector == "copying" or collector == "ref-copy":
        GCConfig(**{**cfg.to_json(), "collector": "copying"}).validate()
    return cfg


def write_metrics_csv(path: str, metrics) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(METRIC_COLUMNS)
        for m in metrics:
            w.writerow([m.epoch, m.live_bytes, m.freed_or_copied_bytes, m.pause_steps,
                        m.free_list_entries, f"{m.occupancy_pct:.2f}"])


def _execute(trace: WorkloadTrace, opts: dict, cfg: GCConfig) -> int:
    collector = opts["collector"]
    if collector in REFERENCE and any(op.get("op") == "alloc" and op.get("kinds") != "..pp"
                                      for op in trace.ops):
        raise ConfigError(f"{collector} only runs two-pointer-field workloads (profile 'mini')")
    overrides = {"heap_bytes": cfg.heap_bytes, "mem_lo": cfg.mem_lo,
                 "root_slots": cfg.root_slots, "check": cfg.check}
    try:
        result = differential(trace, [collector], config_overrides=overrides,
                              fault=opts.get("inject_fault"))
    except GCLabError as e:
        raise ConfigError(str(e))
    log = result.logs[collector]
    if opts.get("metrics"):
        write_metrics_csv(opts["metrics"], log.metrics)
    if opts.get("observations"):
        log.save(opts["observations"])
    summary = (f"{collector} profile={trace.profile} seed={trace.seed} ops={len(trace.ops)} "
               f"heap={cfg.heap_bytes} check={cfg.check}: {log.status}, "
               f"{log.stats.get('collections', 0)} collections")
    if not result.passed:
        payload = {"summary": summary, "detail": log.detail, **result.report.to_json()}
        text = json.dumps(payload, indent=2)
        if opts.get("report"):
            with open(opts["report"], "w", encoding="utf-8") as f:
                f.write(text + "\n")
        print(summary)
        print(text, file=sys.stderr)
        return EXIT_VIOLATION
    print(summary + (f" ({log.detail})" if log.detail else ""))
    if log.status == "oom" and opts.get("strict_oom"):
        return EXIT_OOM
    return EXIT_OK


def cmd_run(args) -> int:
    opts = _resolve(args, RUN_DEFAULTS)
    cfg = _gc_config(opts)
    ops = int(opts["ops"])
    if ops < 0:
        raise ConfigError("--ops must be non-negative")
    if opts["profile"] not in PROFILES:
        raise ConfigError(f"unknown profile {opts['profile']!r}")
    gen_cfg = GCConfig(**{**cfg.to_json(), "collector": "marksweep"})
    trace = generate(int(opts["seed"]), ops, opts["profile"], gen_cfg)
    if opts.get("trace_out"):
        trace.save(opts["trace_out"])
    return _execute(trace, opts, cfg)


def cmd_replay(args) -> int:
    try:
        trace = WorkloadTrace.load(args.trace)
    except (OSError, ValueError, KeyError) as e:
        raise ConfigError(f"cannot read trace {args.trace}: {e}")
    base = dict(RUN_DEFAULTS)
    tc = trace.config
    base.update(heap=tc.get("heap_bytes", base["heap"]), mem_lo=tc.get("mem_lo", 4096),
                root_slots=tc.get("root_slots", base["root_slots"]),
                check=tc.get("check", base["check"]), collector=tc.get("collector", "marksweep"))
    opts = _resolve(args, base)
    return _execute(trace, opts, _gc_config(opts))


def cmd_check(args) -> int:
    try:
        with open(args.snapshot, encoding="utf-8") as f:
            snap = json.load(f)
        h = MutatorHandle.from_snapshot(snap)
    except (OSError, ValueError, KeyError, TypeError, GCLabError) as e:
        raise ConfigError(f"cannot load snapshot {args.snapshot}: {e}")
    rep = check_phase(h)
    text = rep.dumps()
    if args.report:
        with open(args.report, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    print(text)
    return EXIT_OK if rep.passed else EXIT_VIOLATION


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    handler = {"run": cmd_run, "replay": cmd_replay, "check": cmd_check}[args.command]
    try:
        return handler(args)
    except ConfigError as e:
        parser.print_usage(sys.stderr)
        print(f"gclab: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
