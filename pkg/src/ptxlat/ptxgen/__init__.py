"""PTX generation, parsing, and structural validation."""

from .ast import ModuleAst, render
from .codegen import (
    KernelKind,
    OperandPolicy,
    PtxModule,
    RegisterAllocator,
    TimingBlock,
    emit_alu_kernel,
    emit_clock_overhead_kernel,
    emit_constant_kernel,
    emit_div_kernel,
    emit_global_memory_kernel,
    emit_probe_kernel,
    emit_shared_kernel,
    emit_texture_kernel,
)
from .parser import parse
from .validator import Diagnostic, validate_ptx

__all__ = [
    "Diagnostic",
    "KernelKind",
    "ModuleAst",
    "OperandPolicy",
    "PtxModule",
    "RegisterAllocator",
    "TimingBlock",
    "emit_alu_kernel",
    "emit_clock_overhead_kernel",
    "emit_constant_kernel",
    "emit_div_kernel",
    "emit_global_memory_kernel",
    "emit_probe_kernel",
    "emit_shared_kernel",
    "emit_texture_kernel",
    "parse",
    "render",
    "validate_ptx",
]
