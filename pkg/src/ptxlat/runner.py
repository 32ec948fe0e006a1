"""Measurement execution and sample recording.

Two interchangeable backends produce identically shaped RawSamples: the
hardware backend launches a built measurement executable as a child process
once per repetition and parses its RESULT lines; the replay backend reads a
recorded fixture and never touches hardware. Each repetition is an
independent process launch, so cold-cache semantics hold for the first
touch of every run.

The hardware backend is exclusive: a lock serializes runs so at most one
measurement process is alive at any instant, and a run log of
(kernel, start, end) timestamps lets tests assert that. Replay is freely
concurrent.

Fixture files are versioned JSON, one file per (kernel, gpu, optimization
level, toolchain version):

    {"schemaVersion": 1, "kernelId": ..., "gpuName": ...,
     "toolchainVersion": ..., "optLevel": ...,
     "clockOverheadSamples": [u32, ...], "outputs": {name: [u32, ...]}}

``synthesize_fixtures`` materializes the bundled reference dataset as such
fixtures (delta = table latency + a fixed synthetic calibration overhead),
marked "synthetic": replaying them must reproduce the tables exactly.
"""

from __future__ import annotations

import json
import re
import subprocess
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import reference as ref
from .analysis import SYNTHETIC_CLOCK_OVERHEAD
from .catalog import (
    DESCRIPTORS,
    MemoryProbeKind,
    probe_kernel_id,
)
from .errors import BackendFailure, NotInTable, SchemaError

SCHEMA_VERSION = 1
SAMPLE_LIMIT = 2**31  # sanity bound against counter wraparound artifacts
DEFAULT_REPETITIONS = 11  # odd, for a clean median


@dataclass(frozen=True)
class LaunchConfig:
    """One thread in one block: a single thread per warp does the timing.
    ``repetitions`` counts independent process launches."""

    grid: tuple[int, int, int] = (1, 1, 1)
    block: tuple[int, int, int] = (1, 1, 1)
    repetitions: int = DEFAULT_REPETITIONS

    def __post_init__(self):
        bx, by, bz = self.block
        if bx * by * bz != 1:
            raise ValueError("timing kernels run one thread per block")
        if self.repetitions < 3:
            raise ValueError("need at least 3 repetitions")


@dataclass
class RawSamples:
    kernel_id: str
    gpu_name: str
    toolchain_version: str
    opt_level: str
    clock_overhead_samples: list[int]
    outputs: dict[str, list[int]]
    synthetic: bool = False

    def __post_init__(self):
        if not self.outputs or not all(self.outputs.values()):
            raise ValueError(f"{self.kernel_id}: outputs must be non-empty")
        for name, values in self.outputs.items():
            for v in values:
                if not (0 <= v < SAMPLE_LIMIT):
                    raise ValueError(
                        f"{self.kernel_id}/{name}: sample {v} outside [0, 2^31)"
                    )


@dataclass(frozen=True)
class KernelRef:
    """What a backend needs to resolve one kernel: an executable (plus its
    calibration executable) for hardware, or a fixture path / id for replay.
    """

    kernel_id: str
    executable: Optional[str] = None
    clock_executable: Optional[str] = None
    fixture_path: Optional[str] = None
    gpu_name: str = ""
    opt_level: str = "O3"
    toolchain_version: str = ""


# --------------------------------------------------------------------------
# fixtures
# --------------------------------------------------------------------------

def record_fixture(samples: RawSamples, path: str | Path) -> None:
    doc = {
        "schemaVersion": SCHEMA_VERSION,
        "kernelId": samples.kernel_id,
        "gpuName": samples.gpu_name,
        "toolchainVersion": samples.toolchain_version,
        "optLevel": samples.opt_level,
        "synthetic": samples.synthetic,
        "clockOverheadSamples": samples.clock_overhead_samples,
        "outputs": samples.outputs,
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_fixture(path: str | Path) -> RawSamples:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: not valid JSON ({e})") from e
    if doc.get("schemaVersion") != SCHEMA_VERSION:
        raise SchemaError(
            f"{path}: unknown schema version {doc.get('schemaVersion')!r}"
        )
    missing = {
        "kernelId",
        "gpuName",
        "toolchainVersion",
        "optLevel",
        "clockOverheadSamples",
        "outputs",
    } - doc.keys()
    if missing:
        raise SchemaError(f"{path}: missing fields {sorted(missing)}")
    try:
        return RawSamples(
            kernel_id=doc["kernelId"],
            gpu_name=doc["gpuName"],
            toolchain_version=doc["toolchainVersion"],
            opt_level=doc["optLevel"],
            clock_overhead_samples=list(doc["clockOverheadSamples"]),
            outputs={k: list(v) for k, v in doc["outputs"].items()},
            synthetic=bool(doc.get("synthetic", False)),
        )
    except (TypeError, ValueError) as e:
        raise SchemaError(f"{path}: malformed fixture ({e})") from e


def fixture_filename(gpu_name: str, kernel_id: str, opt_level: str) -> str:
    slug = ref.GPU_SLUGS.get(gpu_name, gpu_name.lower().replace(" ", "_"))
    parts = kernel_id.split("__")
    if parts[0] == "probe":
        stem = "_".join(parts[1:])
    else:
        stem = "_".join(parts[1:]).replace(".", "_")
    return f"{slug}_{stem}_{opt_level}.json"


# --------------------------------------------------------------------------
# backends
# --------------------------------------------------------------------------

class ReplayBackend:
    """Reads fixtures instead of hardware; safe for concurrent use."""

    def __init__(self, fixtures_dir: Optional[str | Path] = None):
        self.fixtures_dir = Path(fixtures_dir) if fixtures_dir else None

    def _resolve(self, kernel_ref: KernelRef) -> Path:
        if kernel_ref.fixture_path:
            return Path(kernel_ref.fixture_path)
        if self.fixtures_dir is None:
            raise BackendFailure(kernel_ref.kernel_id, "no fixture path or directory")
        name = fixture_filename(
            kernel_ref.gpu_name, kernel_ref.kernel_id, kernel_ref.opt_level
        )
        return self.fixtures_dir / name

    def run(self, kernel_ref: KernelRef, launch: LaunchConfig) -> RawSamples:
        path = self._resolve(kernel_ref)
        if not path.is_file():
            raise BackendFailure(kernel_ref.kernel_id, f"fixture {path} not found")
        try:
            return load_fixture(path)
        except SchemaError as e:
            raise BackendFailure(kernel_ref.kernel_id, str(e)) from e


_RESULT_RE = re.compile(r"^RESULT\s+(\S+)\s+(\S+)\s+(\d+)\s*$")


class HardwareBackend:
    """Runs built measurement executables; exclusive by construction."""

    def __init__(self, timeout: float = 120.0):
        self._lock = threading.Lock()
        self.timeout = timeout
        self.run_log: list[tuple[str, float, float]] = []

    def _collect(self, kernel_id: str, executable: str, reps: int) -> dict[str, list[int]]:
        outputs: dict[str, list[int]] = {}
        for rep in range(reps):
            try:
                proc = subprocess.run(
                    [executable],
                    capture_output=True,
                    text=True,
                    timeout=self.timeout,
                )
            except OSError as e:
                raise BackendFailure(kernel_id, f"cannot execute {executable}: {e}") from e
            except subprocess.TimeoutExpired as e:
                raise BackendFailure(kernel_id, f"timeout after {self.timeout}s") from e
            if proc.returncode != 0:
                raise BackendFailure(
                    kernel_id,
                    f"rep {rep}: exit {proc.returncode}: {proc.stderr.strip()[:200]}",
                )
            seen = 0
            for line in proc.stdout.splitlines():
                m = _RESULT_RE.match(line)
                if not m:
                    continue
                _, name, value = m.groups()
                v = int(value)
                if v >= SAMPLE_LIMIT:
                    raise BackendFailure(
                        kernel_id, f"rep {rep}: sample {v} for {name} exceeds 2^31"
                    )
                outputs.setdefault(name, []).append(v)
                seen += 1
            if seen == 0:
                raise BackendFailure(
                    kernel_id,
                    f"rep {rep}: no parsable RESULT lines in output "
                    f"{proc.stdout.strip()[:200]!r}",
                )
        return outputs

    def run(self, kernel_ref: KernelRef, launch: LaunchConfig) -> RawSamples:
        if not kernel_ref.executable:
            raise BackendFailure(kernel_ref.kernel_id, "no executable to run")
        with self._lock:
            started = time.monotonic()
            try:
                overhead: list[int] = []
                if kernel_ref.clock_executable:
                    calib = self._collect(
                        kernel_ref.kernel_id,
                        kernel_ref.clock_executable,
                        launch.repetitions,
                    )
                    overhead = calib.get("cycles", [])
                outputs = self._collect(
                    kernel_ref.kernel_id, kernel_ref.executable, launch.repetitions
                )
                return RawSamples(
                    kernel_id=kernel_ref.kernel_id,
                    gpu_name=kernel_ref.gpu_name,
                    toolchain_version=kernel_ref.toolchain_version,
                    opt_level=kernel_ref.opt_level,
                    clock_overhead_samples=overhead,
                    outputs=outputs,
                )
            finally:
                self.run_log.append(
                    (kernel_ref.kernel_id, started, time.monotonic())
                )


@dataclass
class MeasurementRun:
    samples: list[RawSamples] = field(default_factory=list)
    failures: list[BackendFailure] = field(default_factory=list)


def run_measurement(
    suite: Sequence[KernelRef],
    backend,
    launch: Optional[LaunchConfig] = None,
) -> MeasurementRun:
    """Run every kernel strictly sequentially. Failures are collected per
    kernel; the rest of the suite still runs."""
    launch = launch or LaunchConfig()
    run = MeasurementRun()
    for kernel_ref in suite:
        try:
            run.samples.append(backend.run(kernel_ref, launch))
        except BackendFailure as e:
            run.failures.append(e)
        except (ValueError, SchemaError) as e:
            run.failures.append(BackendFailure(kernel_ref.kernel_id, str(e)))
    return run


# --------------------------------------------------------------------------
# synthetic fixtures from the bundled reference tables
# --------------------------------------------------------------------------

def _fixture(kernel_id, gpu_name, opt_level, value, reps, output="cycles") -> RawSamples:
    tv = "10.0" if gpu_name == "TITAN RTX" else "9.0"
    return RawSamples(
        kernel_id=kernel_id,
        gpu_name=gpu_name,
        toolchain_version=tv,
        opt_level=opt_level,
        clock_overhead_samples=[SYNTHETIC_CLOCK_OVERHEAD] * reps,
        outputs={output: [value + SYNTHETIC_CLOCK_OVERHEAD] * reps},
        synthetic=True,
    )


def _descriptor_row(tables, desc):
    """The table row a descriptor's measurements land in: its own row, or
    the derived average row fed by its report group (fp64 division)."""
    try:
        return tables.find_alu_row(desc.report_group, desc.category)
    except NotInTable:
        for row in tables.alu_rows:
            if (
                row.category is desc.category
                and row.derived_from
                and desc.report_group in row.derived_from
            ):
                return row
        return None


def synthesize_fixtures(
    out_dir: str | Path,
    gpus: Optional[Sequence[str]] = None,
    opt_levels: Sequence[str] = ("O3", "O0"),
    reps: int = DEFAULT_REPETITIONS,
) -> list[Path]:
    """Write one fixture per (descriptor-or-probe, gpu, opt level) holding
    the reference latency. Cells printed NA get no fixture. Returns the
    written paths."""
    tables = ref.load_tables()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gpu_names = list(gpus) if gpus else list(ref.GPU_ORDER)
    written: list[Path] = []

    def emit(kernel_id, gpu_name, opt_level, value):
        samples = _fixture(kernel_id, gpu_name, opt_level, value, reps)
        path = out / fixture_filename(gpu_name, kernel_id, opt_level)
        record_fixture(samples, path)
        written.append(path)

    for gpu_name in gpu_names:
        for opt_level in opt_levels:
            opt_class = ref.OptClass.from_opt_level(opt_level)
            for desc in DESCRIPTORS:
                row = _descriptor_row(tables, desc)
                if row is None:
                    continue
                value = row.cell(gpu_name, opt_class)
                if value is None:
                    continue
                emit(desc.kernel_id, gpu_name, opt_level, value)
            for row in tables.memory_rows:
                side = row.optimized if opt_class == ref.OptClass.OPTIMIZED else row.non_optimized
                if gpu_name not in side:
                    continue
                emit(probe_kernel_id(row.probe), gpu_name, opt_level, side[gpu_name])
    return written


def replay_suite(fixtures_dir: str | Path, launch: Optional[LaunchConfig] = None) -> MeasurementRun:
    """Load every fixture in a directory through the replay backend."""
    paths = sorted(Path(fixtures_dir).glob("*.json"))
    suite = []
    for p in paths:
        suite.append(KernelRef(kernel_id=p.stem, fixture_path=str(p)))
    return run_measurement(suite, ReplayBackend(), launch or LaunchConfig())
