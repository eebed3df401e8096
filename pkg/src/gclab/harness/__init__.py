"""Reference collectors plus the differential workload harness."""

from .reference import RefCopy, RefMarkSweep
from .workload import (BACKENDS, PRACTICAL, PROFILES, AbstractModel, DifferentialResult,
                       ObservationLog, WorkloadTrace, differential, generate, run, shrink)

__all__ = [
    "RefCopy", "RefMarkSweep", "BACKENDS", "PRACTICAL", "PROFILES", "AbstractModel",
    "DifferentialResult", "ObservationLog", "WorkloadTrace", "differential", "generate",
    "run", "shrink",
]
