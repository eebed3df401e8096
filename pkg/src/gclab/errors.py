"""Exception hierarchy shared across the package."""


class GCLabError(Exception):
    """Base class for every error raised by gclab."""


class ConfigError(GCLabError):
    """Unusable run configuration (bad heap bounds, unknown collector)."""


class HeapSafetyError(GCLabError):
    """Unaligned or out-of-range heap access, or a word outside [0, 2**32)."""


class LayoutError(GCLabError):
    """Unknown descriptor id or a shape the dense format cannot express."""


class ContractViolation(GCLabError):
    """A mutator-facing precondition was not met (bad pointer, field, kind)."""


class DanglingPointerError(ContractViolation):
    """A pointer-kind word in GC space does not map to a live object."""


class OutOfMemory(GCLabError):
    """Allocation failed even after a full collection."""


class CollectorFault(GCLabError):
    """Internal collector failure: mark-stack overflow, to-space exhausted."""


class InvariantViolation(GCLabError):
    """Raised by a handle whose check level found a failing predicate."""

    def __init__(self, report, where=""):
        self.report = report
        self.where = where
        first = report.violations[0] if report.violations else None
        msg = f"invariant violation at {where}" if where else "invariant violation"
        if first is not None:
            msg += f": {first.predicate} @ {first.location}: {first.detail}"
        super().__init__(msg)
