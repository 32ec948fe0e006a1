"""ptxlat: clock-sandwich PTX microbenchmarks for GPU instruction latency.

Generates timing kernels for a full catalog of ALU instruction variants and
memory probes, plans the assemble/fatbin/host build pipeline across
optimization levels and L1 cache modes, measures on hardware or replays
recorded fixtures, and reduces raw cycle counters into per-instruction
latency tables with conformance diffing against the bundled reference
dataset for seven NVIDIA GPUs (Kepler through Turing).
"""

from .catalog import (
    DataType,
    DivVariant,
    InstructionCategory,
    InstructionDescriptor,
    MemoryProbeKind,
    descriptor_for,
    list_instructions,
)
from .reference import GpuTarget, OptClass, load_tables

__version__ = "0.1.0"

__all__ = [
    "DataType",
    "DivVariant",
    "GpuTarget",
    "InstructionCategory",
    "InstructionDescriptor",
    "MemoryProbeKind",
    "OptClass",
    "descriptor_for",
    "list_instructions",
    "load_tables",
    "__version__",
]
