"""gclab: executable model of two practical garbage collectors with ghost-state checking."""

from .abstract_graph import NO_ABS, NULL, AbstractHeap, NodeRef, Prim, ReachedRecord, RegionMap
from .errors import (CollectorFault, ConfigError, ContractViolation, DanglingPointerError,
                     GCLabError, HeapSafetyError, InvariantViolation, LayoutError, OutOfMemory)
from .mutator import GCConfig, MutatorHandle, Shape, initialize

__version__ = "0.1.0"

__all__ = [
    "NO_ABS", "NULL", "AbstractHeap", "NodeRef", "Prim", "ReachedRecord", "RegionMap",
    "CollectorFault", "ConfigError", "ContractViolation", "DanglingPointerError", "GCLabError",
    "HeapSafetyError", "InvariantViolation", "LayoutError", "OutOfMemory",
    "GCConfig", "MutatorHandle", "Shape", "initialize",
]
