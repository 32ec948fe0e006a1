"""Rendering of latency records as Markdown, CSV, and JSON.

The Markdown layout mirrors the reference tables for easy side-by-side
diffing: one section per instruction category with rows in table order and
one column per (GPU, Optimized/Non-Optimized) pair present in the records.
Rows whose group members all measured the same value are merged back onto
the shared row label; disagreeing members are listed per mnemonic.

CSV is one line per record (nothing merged); JSON is the stable
machine-readable form. All three carry the same cell values, and rendering
the same records twice is byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
from typing import Sequence

from . import reference as ref
from .analysis import LatencyRecord
from .catalog import InstructionCategory

CSV_COLUMNS = (
    "category",
    "instruction",
    "dtype",
    "variant",
    "gpu",
    "opt_level",
    "toolchain",
    "latency_cycles",
    "min",
    "max",
    "n",
    "source",
)


def _record_sort_key(r: LatencyRecord):
    return (
        r.category.index if r.category else 99,
        r.report_key,
        r.instruction or "",
        r.data_type or "",
        r.variant or "",
        ref.GPU_ORDER.index(r.gpu_name) if r.gpu_name in ref.GPU_ORDER else 99,
        r.opt_level,
        r.toolchain_version,
    )


def record_to_dict(r: LatencyRecord) -> dict:
    return {
        "category": r.category.key if r.category else None,
        "report_key": r.report_key,
        "instruction": r.instruction,
        "dtype": r.data_type,
        "variant": r.variant,
        "probe": r.probe.value if r.probe else None,
        "gpu": r.gpu_name,
        "opt_level": r.opt_level,
        "toolchain": r.toolchain_version,
        "latency_cycles": r.latency_cycles,
        "min": r.dispersion.min,
        "max": r.dispersion.max,
        "n": r.dispersion.count,
        "source": r.derived_from.value,
        "anomalous": r.anomalous,
        "kernel_id": r.kernel_id,
    }


def render_json(records: Sequence[LatencyRecord]) -> str:
    rows = [record_to_dict(r) for r in sorted(records, key=_record_sort_key)]
    return json.dumps(rows, indent=1) + "\n"


def render_csv(records: Sequence[LatencyRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in sorted(records, key=_record_sort_key):
        writer.writerow(
            [
                r.category.key if r.category else (r.probe.value if r.probe else ""),
                r.instruction or (r.report_key if r.probe else ""),
                r.data_type or "",
                r.variant or "",
                r.gpu_name,
                r.opt_level,
                r.toolchain_version,
                r.latency_cycles,
                r.dispersion.min,
                r.dispersion.max,
                r.dispersion.count,
                r.derived_from.value,
            ]
        )
    return buf.getvalue()


def _columns(records: Sequence[LatencyRecord]) -> list[tuple[str, str]]:
    """(gpu, opt_class) column pairs present, in canonical order."""
    present = {(r.gpu_name, r.opt_class) for r in records}
    ordered = []
    for gpu in ref.GPU_ORDER:
        for opt_class in (ref.OptClass.OPTIMIZED, ref.OptClass.NON_OPTIMIZED):
            if (gpu, opt_class) in present:
                ordered.append((gpu, opt_class))
    for gpu, opt_class in sorted(present):
        if (gpu, opt_class) not in ordered:
            ordered.append((gpu, opt_class))
    return ordered


_OPT_SHORT = {ref.OptClass.OPTIMIZED: "opt", ref.OptClass.NON_OPTIMIZED: "noopt"}


def _md_table(rows: list[tuple[str, dict]], columns: list[tuple[str, str]]) -> list[str]:
    header = ["Instruction"] + [f"{g} ({_OPT_SHORT[o]})" for g, o in columns]
    lines = ["| " + " | ".join(header) + " |"]
    lines.append("|" + "|".join("---" for _ in header) + "|")
    for label, cells in rows:
        out = [label]
        for col in columns:
            out.append(str(cells.get(col, "")))
        lines.append("| " + " | ".join(out) + " |")
    return lines


def _row_labels_in_table_order(category: InstructionCategory, tables) -> list[str]:
    return [row.label for row in tables.alu_rows if row.category is category]


def render_markdown(records: Sequence[LatencyRecord], title: str = "Latency report") -> str:
    """Category-grouped tables, one cell per (row, gpu, opt class)."""
    tables = ref.load_tables()
    records = sorted(records, key=_record_sort_key)
    columns = _columns(records)
    lines = [f"# {title}", ""]

    alu = [r for r in records if r.category is not None]
    probes = [r for r in records if r.probe is not None]

    for category in sorted(InstructionCategory, key=lambda c: c.index):
        cat_records = [r for r in alu if r.category is category]
        if not cat_records:
            continue
        lines.append(f"## ({category.index}) {category.heading}")
        lines.append("")
        known = _row_labels_in_table_order(category, tables)
        by_label: dict[str, list[LatencyRecord]] = {}
        for r in cat_records:
            by_label.setdefault(r.report_key, []).append(r)
        ordered_labels = [l for l in known if l in by_label] + sorted(
            l for l in by_label if l not in known
        )
        rows = []
        for label in ordered_labels:
            recs = by_label[label]
            per_col: dict[tuple, list[LatencyRecord]] = {}
            for r in recs:
                per_col.setdefault((r.gpu_name, r.opt_class), []).append(r)
            merged = all(
                len({x.latency_cycles for x in col_recs}) == 1
                for col_recs in per_col.values()
            )
            if merged:
                rows.append(
                    (label, {col: col_recs[0].latency_cycles for col, col_recs in per_col.items()})
                )
            else:
                members = sorted({r.instruction for r in recs if r.instruction})
                for m in members:
                    cells = {}
                    for col, col_recs in per_col.items():
                        mrecs = [x for x in col_recs if x.instruction == m]
                        if mrecs:
                            cells[col] = mrecs[0].latency_cycles
                    rows.append((f"{label} · {m}", cells))
        lines.extend(_md_table(rows, columns))
        lines.append("")

    if probes:
        lines.append("## Memory and calibration probes")
        lines.append("")
        by_key: dict[str, dict] = {}
        for r in probes:
            by_key.setdefault(r.report_key, {})[(r.gpu_name, r.opt_class)] = r.latency_cycles
        rows = [(k, by_key[k]) for k in sorted(by_key)]
        lines.extend(_md_table(rows, _columns(probes)))
        lines.append("")

    return "\n".join(lines)


def render(records: Sequence[LatencyRecord], fmt: str, title: str = "Latency report") -> str:
    if fmt == "md":
        return render_markdown(records, title)
    if fmt == "csv":
        return render_csv(records)
    if fmt == "json":
        return render_json(records)
    raise ValueError(f"unknown report format {fmt!r}")


def render_conformance(report, verbose: bool = False) -> str:
    """Human summary of a conformance diff."""
    lines = [
        f"reference cells: {report.total_cells}",
        f"covered:         {report.covered_cells}",
        f"exact:           {report.exact}",
        f"within tol.:     {report.within_tolerance}",
        f"out of tol.:     {report.out_of_tolerance}",
        f"extra records:   {report.missing_in_reference}",
        f"conformance:     {report.conformance * 100:.2f}%"
        + ("  (100% exact)" if report.fully_exact else ""),
    ]
    if verbose:
        for s in report.statuses:
            if s.status in ("exact",):
                continue
            r = s.record
            lines.append(
                f"  {s.status}: {r.report_key} {r.gpu_name} {r.opt_level} "
                f"= {r.latency_cycles} (expected {s.expected}, delta {s.delta})"
            )
    return "\n".join(lines) + "\n"
