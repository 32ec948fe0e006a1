"""Reduction of raw cycle samples into latency records.

The pipeline is: take the repeated counter deltas for one kernel, compute
the clock-read calibration overhead measured in the same session, subtract
it from every delta, and take the median. The median (not the min, not the
mean) is the central estimator throughout: robust to scheduler jitter
without being biased low. For even sample counts the lower middle sample is
used so results stay integers drawn from the data.

Negative net latencies clamp to zero and set an anomaly flag instead of
failing, which keeps full-suite runs alive on noisy hardware.

Division is reported three ways per data type: regular (power-of-two
divisor), irregular, and their derived average floor((regular+irregular)/2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import NamedTuple, Optional, Sequence

from . import reference as ref
from .catalog import (
    DivVariant,
    InstructionCategory,
    MemoryProbeKind,
    parse_kernel_id,
)
from .errors import EmptySamples, MixedKeys, NotApplicable, NotInTable, ZeroDivisor

#: Synthetic calibration constant used when fixtures are synthesized from
#: the reference tables: delta = table latency + this, overhead = this.
SYNTHETIC_CLOCK_OVERHEAD = 14


class RecordSource(Enum):
    MEASURED = "measured"
    REPLAYED = "replayed"
    REFERENCE_TABLE = "reference_table"


class Dispersion(NamedTuple):
    min: int
    max: int
    count: int


class NetLatency(NamedTuple):
    cycles: int
    anomalous: bool


@dataclass(frozen=True)
class LatencyRecord:
    """One reduced measurement keyed the way reports and the reference
    tables are keyed."""

    report_key: str
    gpu_name: str
    opt_level: str
    toolchain_version: str
    latency_cycles: int
    dispersion: Dispersion
    derived_from: RecordSource
    category: Optional[InstructionCategory] = None
    instruction: Optional[str] = None
    data_type: Optional[str] = None
    variant: Optional[str] = None
    probe: Optional[MemoryProbeKind] = None
    kernel_id: Optional[str] = None
    anomalous: bool = False

    def __post_init__(self):
        if self.latency_cycles < 0:
            raise ValueError("latency cannot be negative")
        if not (self.dispersion.min <= self.latency_cycles <= self.dispersion.max):
            raise ValueError("median must lie within dispersion bounds")

    @property
    def opt_class(self) -> str:
        return ref.OptClass.from_opt_level(self.opt_level)


@dataclass(frozen=True)
class DivTriple:
    regular: int
    irregular: int

    @property
    def average(self) -> int:
        return div_average(self.regular, self.irregular)


def _median_low(values: Sequence[int]) -> int:
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


def clock_overhead(samples: Sequence[int]) -> int:
    """Median of the empty-sandwich calibration deltas."""
    if not samples:
        raise EmptySamples("clock overhead needs at least one sample")
    return _median_low(samples)


def net_latency(raw_delta: int, overhead: int) -> NetLatency:
    """Raw delta minus calibration overhead, clamped at zero with an
    anomaly flag when the calibration exceeds the measurement."""
    net = raw_delta - overhead
    if net < 0:
        return NetLatency(0, True)
    return NetLatency(net, False)


def classify_divisor(d) -> DivVariant:
    """Regular iff |d| is an exact power of two (ints or floats)."""
    if d == 0:
        raise ZeroDivisor("divisor must be nonzero")
    if isinstance(d, int):
        mag = abs(d)
        regular = mag & (mag - 1) == 0
    else:
        mantissa, _ = math.frexp(abs(d))
        regular = mantissa == 0.5
    return DivVariant.REGULAR if regular else DivVariant.IRREGULAR


def div_average(regular: int, irregular: int) -> int:
    return (regular + irregular) // 2


def _warmup(values: Sequence[int], cold: bool) -> list[int]:
    """Drop the first repetition as warm-up, except for cold-load outputs
    where the first touch is the measurement, and except when there is only
    a single sample to begin with."""
    vals = list(values)
    if not cold and len(vals) > 1:
        vals = vals[1:]
    return vals


def aggregate(
    samples,
    overhead: int,
    output: str = "cycles",
    source: RecordSource = RecordSource.MEASURED,
    report_key: Optional[str] = None,
) -> LatencyRecord:
    """Reduce one output stream of one kernel's RawSamples to a record."""
    if output not in samples.outputs:
        raise EmptySamples(f"{samples.kernel_id} has no output {output!r}")
    cold = output.endswith("_cold")
    values = _warmup(samples.outputs[output], cold)
    if not values:
        raise EmptySamples(f"{samples.kernel_id}/{output} empty after warm-up")
    nets = [net_latency(v, overhead) for v in values]
    cycles = [n.cycles for n in nets]
    return LatencyRecord(
        report_key=report_key or f"{samples.kernel_id}:{output}",
        gpu_name=samples.gpu_name,
        opt_level=samples.opt_level,
        toolchain_version=samples.toolchain_version,
        latency_cycles=_median_low(cycles),
        dispersion=Dispersion(min(cycles), max(cycles), len(cycles)),
        derived_from=source,
        kernel_id=samples.kernel_id,
        anomalous=any(n.anomalous for n in nets),
    )


_PROBE_KEYS = {
    MemoryProbeKind.GLOBAL_MEMORY: "Global Memory",
    MemoryProbeKind.L1_HIT: "L1 Cache Hit",
    MemoryProbeKind.L2_HIT: "L2 Cache Hit",
    MemoryProbeKind.TEXTURE_MEMORY: "Texture Memory",
    MemoryProbeKind.TEXTURE_CACHE_HIT: "Texture Cache Hit",
    MemoryProbeKind.SHARED_MEMORY: "Shared Memory",
    MemoryProbeKind.CONSTANT_MEMORY: "Constant Memory",
    MemoryProbeKind.CLOCK_OVERHEAD: "Clock Overhead",
}


def _probe_for_output(identity, output: str) -> MemoryProbeKind:
    kind = identity.probe
    if kind is MemoryProbeKind.GLOBAL_MEMORY and output == "cycles_hit":
        return MemoryProbeKind.L1_HIT if identity.l1_enabled else MemoryProbeKind.L2_HIT
    if kind is MemoryProbeKind.TEXTURE_MEMORY and output == "cycles_hit":
        return MemoryProbeKind.TEXTURE_CACHE_HIT
    return kind


def records_from_samples(samples, source: RecordSource) -> list[LatencyRecord]:
    """All latency records one RawSamples bundle yields: one per cycles
    output, keyed by catalog report group or probe label. Non-cycle outputs
    (dummy sinks) are ignored."""
    identity = parse_kernel_id(samples.kernel_id)
    overhead = (
        clock_overhead(samples.clock_overhead_samples)
        if samples.clock_overhead_samples
        else 0
    )
    out: list[LatencyRecord] = []
    for output in sorted(samples.outputs):
        if not output.startswith("cycles"):
            continue
        if identity.descriptor is not None:
            d = identity.descriptor
            rec = aggregate(samples, overhead, output, source, report_key=d.report_group)
            rec = replace(
                rec,
                category=d.category,
                instruction=d.mnemonic,
                data_type=d.data_type.value,
                variant=d.div_variant.value if d.div_variant else None,
            )
        else:
            kind = _probe_for_output(identity, output)
            rec = aggregate(samples, overhead, output, source, report_key=_PROBE_KEYS[kind])
            rec = replace(rec, probe=kind)
        out.append(rec)
    return out


def derive_div_averages(records: Sequence[LatencyRecord]) -> list[LatencyRecord]:
    """Derived "(average)" records from regular/irregular division pairs
    sharing (category, data type, gpu, opt level, toolchain)."""
    pairs: dict[tuple, dict[str, LatencyRecord]] = {}
    for r in records:
        if r.instruction != "div" or r.variant is None:
            continue
        key = (r.category, r.data_type, r.gpu_name, r.opt_level, r.toolchain_version)
        pairs.setdefault(key, {})[r.variant] = r
    out = []
    for key, sides in sorted(pairs.items(), key=lambda kv: str(kv[0])):
        if set(sides) != {"regular", "irregular"}:
            continue
        reg, irr = sides["regular"], sides["irregular"]
        avg = div_average(reg.latency_cycles, irr.latency_cycles)
        label = reg.report_key.replace("(regular)", "(average)")
        out.append(
            replace(
                reg,
                report_key=label,
                variant="average",
                latency_cycles=avg,
                dispersion=Dispersion(
                    min(reg.dispersion.min, irr.dispersion.min),
                    max(reg.dispersion.max, irr.dispersion.max),
                    reg.dispersion.count + irr.dispersion.count,
                ),
                anomalous=reg.anomalous or irr.anomalous,
            )
        )
    return out


# --------------------------------------------------------------------------
# comparisons
# --------------------------------------------------------------------------

_AXES = {
    "optLevel": lambda r: r.opt_level,
    "gpu": lambda r: r.gpu_name,
    "toolchainVersion": lambda r: r.toolchain_version,
}


@dataclass(frozen=True)
class DeltaRow:
    key: str
    values: dict
    abs_delta: dict
    rel_delta: dict


@dataclass(frozen=True)
class DeltaTable:
    axis: str
    baseline: str
    rows: tuple[DeltaRow, ...]


def compare(records: Sequence[LatencyRecord], axis: str, baseline: Optional[str] = None) -> DeltaTable:
    """Pivot records along one axis (optLevel, gpu, or toolchainVersion) and
    report absolute/relative deltas against the baseline axis point."""
    if axis not in _AXES:
        raise ValueError(f"unknown axis {axis!r}")
    get_axis = _AXES[axis]
    non_axis = [name for name in _AXES if name != axis]

    groups: dict[str, list[LatencyRecord]] = {}
    for r in records:
        groups.setdefault(r.report_key, []).append(r)

    rows = []
    baseline_point = baseline
    for key in sorted(groups):
        recs = groups[key]
        for other in non_axis:
            vals = {_AXES[other](r) for r in recs}
            if len(vals) > 1:
                raise MixedKeys(
                    f"records for {key!r} differ in {other}: {sorted(vals)}"
                )
        values = {}
        for r in recs:
            point = get_axis(r)
            if point in values and values[point] != r.latency_cycles:
                raise MixedKeys(f"conflicting values for {key!r} at {point!r}")
            values[point] = r.latency_cycles
        if baseline_point is None:
            baseline_point = get_axis(recs[0])
        if baseline_point not in values:
            raise MixedKeys(f"baseline {baseline_point!r} missing for {key!r}")
        base = values[baseline_point]
        abs_delta = {p: v - base for p, v in values.items()}
        rel_delta = {p: (v - base) / base if base else 0.0 for p, v in values.items()}
        rows.append(DeltaRow(key, values, abs_delta, rel_delta))
    return DeltaTable(axis=axis, baseline=baseline_point or "", rows=tuple(rows))


# --------------------------------------------------------------------------
# conformance against the bundled reference tables
# --------------------------------------------------------------------------

STATUS_EXACT = "exact"
STATUS_WITHIN_TOLERANCE = "within-tolerance"
STATUS_OUT_OF_TOLERANCE = "out-of-tolerance"
STATUS_MISSING_IN_REFERENCE = "missing-in-reference"

#: Default tolerances: ALU cells are integer-exact prints, memory probes are
#: inherently noisier, so they get a relative band.
DEFAULT_ALU_TOLERANCE = 2
DEFAULT_MEMORY_TOLERANCE_FRAC = 0.10


@dataclass(frozen=True)
class RecordStatus:
    record: LatencyRecord
    status: str
    expected: Optional[int] = None
    delta: Optional[int] = None


@dataclass(frozen=True)
class ConformanceReport:
    statuses: tuple[RecordStatus, ...]
    total_cells: int
    covered_cells: int
    exact: int
    within_tolerance: int
    out_of_tolerance: int
    missing_in_reference: int

    @property
    def conformance(self) -> float:
        if self.covered_cells == 0:
            return 0.0
        return (self.exact + self.within_tolerance) / self.covered_cells

    @property
    def fully_exact(self) -> bool:
        return self.covered_cells == self.total_cells and self.exact == self.covered_cells


def _record_cell(r: LatencyRecord, tables) -> Optional[tuple]:
    """(kind, cell key, expected value) for a record, or None when the
    reference tables have nothing for it."""
    opt_class = r.opt_class
    if r.probe is not None:
        try:
            expected = tables.lookup_memory(r.gpu_name, r.probe, opt_class)
        except (NotInTable, NotApplicable):
            return None
        return ("memory", (r.probe, r.gpu_name, opt_class), expected)
    if r.category is None:
        return None
    try:
        row = tables.find_alu_row(r.report_key, r.category)
    except NotInTable:
        return None
    value = row.cell(r.gpu_name, opt_class)
    if value is None:
        return None
    return ("alu", (r.category, row.label, r.gpu_name, opt_class), value)


def reference_cells(tables=None) -> set[tuple]:
    """Every populated (row, gpu, opt class) cell of the bundled tables."""
    tables = tables or ref.load_tables()
    cells = set()
    for row in tables.alu_rows:
        for opt_class in (ref.OptClass.OPTIMIZED, ref.OptClass.NON_OPTIMIZED):
            side = row.optimized if opt_class == ref.OptClass.OPTIMIZED else row.non_optimized
            for gpu, value in side.items():
                if value is not None:
                    cells.add(("alu", (row.category, row.label, gpu, opt_class)))
    for row in tables.memory_rows:
        for opt_class in (ref.OptClass.OPTIMIZED, ref.OptClass.NON_OPTIMIZED):
            side = row.optimized if opt_class == ref.OptClass.OPTIMIZED else row.non_optimized
            for gpu in side:
                cells.add(("memory", (row.probe, gpu, opt_class)))
    return cells


def diff_vs_reference(
    records: Sequence[LatencyRecord],
    tables=None,
    tolerance_alu: int = DEFAULT_ALU_TOLERANCE,
    tolerance_memory_frac: float = DEFAULT_MEMORY_TOLERANCE_FRAC,
) -> ConformanceReport:
    """Match records against the bundled tables cell by cell.

    Cell coverage counts reference cells matched by at least one record; a
    cell is exact/within tolerance only if every record mapping to it is.
    Records with no reference counterpart are reported missing-in-reference
    and do not hurt conformance.
    """
    tables = tables or ref.load_tables()
    statuses: list[RecordStatus] = []
    cell_status: dict[tuple, str] = {}

    def worse(a: str, b: str) -> str:
        order = [STATUS_EXACT, STATUS_WITHIN_TOLERANCE, STATUS_OUT_OF_TOLERANCE]
        return max((a, b), key=order.index)

    for r in records:
        hit = _record_cell(r, tables)
        if hit is None:
            statuses.append(RecordStatus(r, STATUS_MISSING_IN_REFERENCE))
            continue
        kind, cell, expected = hit
        delta = r.latency_cycles - expected
        if delta == 0:
            status = STATUS_EXACT
        else:
            if kind == "memory":
                ok = abs(delta) <= tolerance_memory_frac * expected
            else:
                ok = abs(delta) <= tolerance_alu
            status = STATUS_WITHIN_TOLERANCE if ok else STATUS_OUT_OF_TOLERANCE
        statuses.append(RecordStatus(r, status, expected=expected, delta=delta))
        cell_status[cell] = worse(status, cell_status.get(cell, STATUS_EXACT))

    all_cells = reference_cells(tables)
    counts = {STATUS_EXACT: 0, STATUS_WITHIN_TOLERANCE: 0, STATUS_OUT_OF_TOLERANCE: 0}
    for status in cell_status.values():
        counts[status] += 1
    return ConformanceReport(
        statuses=tuple(statuses),
        total_cells=len(all_cells),
        covered_cells=len(cell_status),
        exact=counts[STATUS_EXACT],
        within_tolerance=counts[STATUS_WITHIN_TOLERANCE],
        out_of_tolerance=counts[STATUS_OUT_OF_TOLERANCE],
        missing_in_reference=sum(
            1 for s in statuses if s.status == STATUS_MISSING_IN_REFERENCE
        ),
    )
