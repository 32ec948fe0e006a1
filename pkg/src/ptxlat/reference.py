"""Bundled reference latency tables and GPU configurations.

The dataset ships as a human-diffable JSON file (``data/reference_tables.json``)
covering seven NVIDIA GPUs across five architectures, Kepler through Turing:

* per-instruction ALU latencies at optimized (-O3) and non-optimized (-O0)
  build levels, eight categories, with dual Kepler cells stored per model;
* shared and constant memory access latencies;
* the CUDA 9.0 vs 10.0 compiler comparison measured on Volta;
* the GPU configuration sheet.

The file is integrity-checked against a pinned SHA-256 at load time so
accidental edits are caught early. Loaded tables are immutable and safe to
share across threads.

Row labels accept a loose grammar on lookup: whitespace is insignificant and
an optional trailing category tag narrows homonymous rows, e.g.
``"add/sub/min/max [int]"`` or ``"div f64"``.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Optional

from .catalog import InstructionCategory, MemoryProbeKind
from .errors import NotApplicable, NotInTable, SchemaError

DATA_RESOURCE = "reference_tables.json"
DATA_SHA256 = "6ba2e80d2cf8bfcae26b152ea67208717c7fd55487a1c79c87e5b93ec12ba547"

#: Canonical model order used for report columns.
GPU_ORDER = ("K40m", "K80c", "TITAN X", "P100", "TITAN V", "V100", "TITAN RTX")

#: Short slugs used in fixture and artifact file names.
GPU_SLUGS = {
    "K40m": "k40m",
    "K80c": "k80c",
    "TITAN X": "titan_x",
    "P100": "p100",
    "TITAN V": "titan_v",
    "V100": "v100",
    "TITAN RTX": "rtx",
}
SLUG_TO_GPU = {v: k for k, v in GPU_SLUGS.items()}

_ARCH_CC_MAJOR = {"Kepler": 3, "Maxwell": 5, "Pascal": 6, "Volta": 7, "Turing": 7}


class OptClass:
    """Build-level buckets of the reference tables: -O0 reports as
    non-optimized, everything else as optimized."""

    OPTIMIZED = "optimized"
    NON_OPTIMIZED = "non_optimized"

    @staticmethod
    def from_opt_level(opt_level: str) -> str:
        return OptClass.NON_OPTIMIZED if opt_level == "O0" else OptClass.OPTIMIZED


@dataclass(frozen=True)
class SmxResources:
    sp: int
    dp: int
    sfu: int
    ldst: int


@dataclass(frozen=True)
class GpuTarget:
    """One GPU model. Fields not published for the two cross-check models
    (K80c, TITAN V) are None."""

    name: str
    architecture: str
    chip: str
    compute_capability: float
    gpu_clock_mhz: Optional[int] = None
    mem_clock_mhz: Optional[int] = None
    mem_size_gb: Optional[int] = None
    mem_type: Optional[str] = None
    mem_bus_bits: Optional[int] = None
    mem_bandwidth_gbs: Optional[float] = None
    l1_size_kb: Optional[int] = None
    l2_size_kb: Optional[int] = None
    smx_count: Optional[int] = None
    cores_total: Optional[int] = None
    per_smx: Optional[SmxResources] = None

    def __post_init__(self):
        major = int(self.compute_capability)
        if _ARCH_CC_MAJOR.get(self.architecture) != major:
            raise ValueError(
                f"{self.name}: compute capability {self.compute_capability} "
                f"inconsistent with {self.architecture}"
            )

    @property
    def arch_string(self) -> str:
        return f"sm_{int(round(self.compute_capability * 10))}"


@dataclass(frozen=True)
class AluRow:
    """One row of the ALU latency table, expanded to per-model cells.
    ``derived_from`` names the regular/irregular source rows of an
    "(average)" row; derived rows are produced by analysis, not measured."""

    category: InstructionCategory
    label: str
    optimized: dict
    non_optimized: dict
    derived_from: Optional[tuple[str, str]] = None

    @property
    def derived(self) -> bool:
        return self.derived_from is not None

    def cell(self, gpu_name: str, opt_class: str) -> Optional[int]:
        side = self.optimized if opt_class == OptClass.OPTIMIZED else self.non_optimized
        if gpu_name not in side:
            raise NotInTable(f"gpu {gpu_name!r} not in table")
        return side[gpu_name]


@dataclass(frozen=True)
class MemoryRow:
    probe: MemoryProbeKind
    label: str
    optimized: dict
    non_optimized: dict


@dataclass(frozen=True)
class CudaVersionRow:
    category: InstructionCategory
    label: str
    alu_label: str
    v9: int
    v10: int


_LABEL_TAGS = {
    "int": InstructionCategory.INT_ARITH,
    "u32": InstructionCategory.INT_ARITH,
    "s32": InstructionCategory.INT_ARITH,
    "logic": InstructionCategory.LOGIC_SHIFT,
    "f32": InstructionCategory.FP32,
    "fp32": InstructionCategory.FP32,
    "f64": InstructionCategory.FP64,
    "fp64": InstructionCategory.FP64,
    "f16": InstructionCategory.FP16,
    "fp16": InstructionCategory.FP16,
    "multi": InstructionCategory.MULTI_PRECISION,
    "special": InstructionCategory.SPECIAL_MATH,
    "intrinsic": InstructionCategory.INT_INTRINSIC,
}


def normalize_label(label: str) -> str:
    return re.sub(r"\s+", "", label)


def split_label_tag(label: str) -> tuple[str, Optional[InstructionCategory]]:
    """Strip a trailing category tag: "fma [f16]" or "div f64"."""
    m = re.match(r"^(.*?)[\s]*\[(\w+)\]$", label.strip())
    if m and m.group(2).lower() in _LABEL_TAGS:
        return m.group(1), _LABEL_TAGS[m.group(2).lower()]
    parts = label.strip().rsplit(None, 1)
    if len(parts) == 2 and parts[1].lower() in _LABEL_TAGS:
        return parts[0], _LABEL_TAGS[parts[1].lower()]
    return label, None


class ReferenceTables:
    """Immutable view over the loaded dataset with lookup helpers."""

    def __init__(self, doc: dict):
        if doc.get("schema_version") != 1:
            raise SchemaError(
                f"unknown reference data schema version {doc.get('schema_version')!r}"
            )
        self._gpus: dict[str, GpuTarget] = {}
        for g in doc["gpus"]:
            per_smx = SmxResources(**g["per_smx"]) if g.get("per_smx") else None
            self._gpus[g["name"]] = GpuTarget(
                **{k: v for k, v in g.items() if k != "per_smx"}, per_smx=per_smx
            )
        self.alu_rows: tuple[AluRow, ...] = tuple(
            AluRow(
                category=InstructionCategory.from_key(r["category"]),
                label=r["label"],
                optimized=dict(r["optimized"]),
                non_optimized=dict(r["non_optimized"]),
                derived_from=tuple(r["derived_from"]) if r["derived_from"] else None,
            )
            for r in doc["alu"]
        )
        self.memory_rows: tuple[MemoryRow, ...] = tuple(
            MemoryRow(
                probe=MemoryProbeKind(r["probe"]),
                label=r["label"],
                optimized=dict(r["optimized"]),
                non_optimized=dict(r["non_optimized"]),
            )
            for r in doc["memory"]
        )
        self.cuda_rows: tuple[CudaVersionRow, ...] = tuple(
            CudaVersionRow(
                category=InstructionCategory.from_key(r["category"]),
                label=r["label"],
                alu_label=r["alu_label"],
                v9=r["v9"],
                v10=r["v10"],
            )
            for r in doc["cuda_versions"]
        )
        self._alu_index = {
            (row.category, normalize_label(row.label)): row for row in self.alu_rows
        }

    # -- GPUs ---------------------------------------------------------------

    def gpus(self) -> list[GpuTarget]:
        return [self._gpus[n] for n in GPU_ORDER]

    def gpu(self, name: str) -> GpuTarget:
        if name in self._gpus:
            return self._gpus[name]
        if name in SLUG_TO_GPU:
            return self._gpus[SLUG_TO_GPU[name]]
        raise NotInTable(f"unknown gpu {name!r}")

    # -- ALU table ----------------------------------------------------------

    def find_alu_row(
        self, label: str, category: Optional[InstructionCategory] = None
    ) -> AluRow:
        bare, tag = split_label_tag(label)
        category = category or tag
        key = normalize_label(bare)
        if category is not None:
            row = self._alu_index.get((category, key))
            if row is None:
                raise NotInTable(f"no row {label!r} in category {category.key}")
            return row
        rows = [r for (c, k), r in self._alu_index.items() if k == key]
        if len(rows) == 1:
            return rows[0]
        if not rows:
            raise NotInTable(f"no row {label!r}")
        raise NotInTable(
            f"row label {label!r} is ambiguous across categories; add a tag "
            "like '[int]' or '[f32]'"
        )

    def lookup(
        self,
        gpu: GpuTarget | str,
        row_label: str,
        opt_class: str,
        category: Optional[InstructionCategory] = None,
    ) -> int:
        gpu_name = gpu if isinstance(gpu, str) else gpu.name
        if gpu_name not in self._gpus and gpu_name in SLUG_TO_GPU:
            gpu_name = SLUG_TO_GPU[gpu_name]
        row = self.find_alu_row(row_label, category)
        value = row.cell(gpu_name, opt_class)
        if value is None:
            raise NotApplicable(f"{row.label} is NA on {gpu_name}")
        return value

    # -- memory table ---------------------------------------------------------

    def lookup_memory(
        self, gpu: GpuTarget | str, probe: MemoryProbeKind | str, opt_class: str
    ) -> int:
        gpu_name = gpu if isinstance(gpu, str) else gpu.name
        kind = probe if isinstance(probe, MemoryProbeKind) else MemoryProbeKind(probe)
        for row in self.memory_rows:
            if row.probe is kind:
                side = row.optimized if opt_class == OptClass.OPTIMIZED else row.non_optimized
                if gpu_name not in side:
                    raise NotInTable(f"gpu {gpu_name!r} not in memory table")
                return side[gpu_name]
        raise NotInTable(f"no memory latency table for probe {kind.value!r}")

    # -- CUDA version table ---------------------------------------------------

    def lookup_cuda_delta(self, instruction: str) -> tuple[int, int]:
        bare, tag = split_label_tag(instruction)
        key = normalize_label(bare)
        matches = [
            r
            for r in self.cuda_rows
            if normalize_label(r.label) == key and (tag is None or r.category is tag)
        ]
        if len(matches) == 1:
            return (matches[0].v9, matches[0].v10)
        if not matches:
            raise NotInTable(f"{instruction!r} is not in the CUDA version table")
        raise NotInTable(f"{instruction!r} is ambiguous in the CUDA version table")


@lru_cache(maxsize=1)
def load_tables() -> ReferenceTables:
    blob = resources.files("ptxlat.data").joinpath(DATA_RESOURCE).read_bytes()
    digest = hashlib.sha256(blob).hexdigest()
    if digest != DATA_SHA256:
        raise SchemaError(
            f"reference data checksum mismatch: expected {DATA_SHA256[:12]}..., "
            f"got {digest[:12]}..."
        )
    return ReferenceTables(json.loads(blob))
