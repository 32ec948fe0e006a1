"""Exception types shared across the harness."""


class PtxLatError(Exception):
    """Base class for all harness errors."""


class UnknownInstruction(PtxLatError, LookupError):
    """Requested (mnemonic, data type) pair is not in the catalog."""


class UnsupportedOnTarget(PtxLatError):
    """Instruction needs a higher compute capability than the target arch."""


class ZeroDivisor(PtxLatError, ValueError):
    """Division kernels require a nonzero divisor."""


class UnsupportedConfig(PtxLatError):
    """Build configuration cannot be realized for the given kernel."""


class ToolNotFound(PtxLatError):
    """An external tool required by a build step is not on disk."""


class StepFailed(PtxLatError):
    """A build step exited nonzero. Carries the step index and stderr."""

    def __init__(self, step_index: int, stderr: str, result=None):
        super().__init__(f"step {step_index} failed: {stderr.strip()[:400]}")
        self.step_index = step_index
        self.stderr = stderr
        self.result = result


class BackendFailure(PtxLatError):
    """A measurement backend could not produce samples for one kernel."""

    def __init__(self, kernel_id: str, detail: str):
        super().__init__(f"{kernel_id}: {detail}")
        self.kernel_id = kernel_id
        self.detail = detail


class SchemaError(PtxLatError):
    """Fixture file has an unknown schema version or a malformed shape."""


class EmptySamples(PtxLatError, ValueError):
    """An aggregation was asked to reduce an empty sample list."""


class MixedKeys(PtxLatError, ValueError):
    """Records passed to a comparison differ in a non-axis key field."""


class NotInTable(PtxLatError, LookupError):
    """Reference-table lookup key does not exist."""


class NotApplicable(PtxLatError):
    """Reference-table cell exists but holds no value (NA)."""
