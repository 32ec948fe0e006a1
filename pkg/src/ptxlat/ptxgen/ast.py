"""AST for the PTX subset emitted and validated by this harness.

Nodes are plain frozen dataclasses so structural equality works out of the
box; ``render`` turns a module back into text and is the single source of
formatting. The subset is straight-line kernel code: no labels, branches,
or predication.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Union

SPECIAL_REGISTERS = frozenset({"%clock", "%clock64", "%tid.x", "%ctaid.x"})


@dataclass(frozen=True)
class Reg:
    name: str  # includes the leading '%'

    def render(self) -> str:
        return self.name


@dataclass(frozen=True)
class Imm:
    """Immediate operand, kept as source text so rendering round-trips.
    Hex float forms (0f..../0d....) are preserved verbatim."""

    text: str

    def render(self) -> str:
        return self.text


@dataclass(frozen=True)
class MemRef:
    """Bracketed address: base register, parameter, or space symbol plus a
    byte offset."""

    base: str
    offset: int = 0

    def render(self) -> str:
        if self.offset:
            return f"[{self.base}+{self.offset}]"
        return f"[{self.base}]"


@dataclass(frozen=True)
class VecReg:
    regs: tuple[Reg, ...]

    def render(self) -> str:
        return "{" + ", ".join(r.render() for r in self.regs) + "}"


@dataclass(frozen=True)
class TexRef:
    """Texture fetch source: [handleReg, {coordRegs...}]."""

    handle: Reg
    coords: tuple[Reg, ...]

    def render(self) -> str:
        coords = ", ".join(r.render() for r in self.coords)
        return f"[{self.handle.render()}, {{{coords}}}]"


Operand = Union[Reg, Imm, MemRef, VecReg, TexRef]


@dataclass(frozen=True)
class Instr:
    """One instruction; ``opcode`` is the full dotted form (add.u32)."""

    opcode: str
    operands: tuple[Operand, ...] = ()

    @property
    def base(self) -> str:
        return self.opcode.split(".", 1)[0]

    def render(self) -> str:
        if not self.operands:
            return f"{self.opcode};"
        ops = ", ".join(o.render() for o in self.operands)
        return f"{self.opcode:<15} {ops};"


@dataclass(frozen=True)
class RegDecl:
    """.reg .b32 %r<count>; declares %r0 .. %r<count-1>."""

    reg_type: str  # ".b32"
    prefix: str  # "%r"
    count: int

    def render(self) -> str:
        return f".reg {self.reg_type} {self.prefix}<{self.count}>;"

    def names(self) -> set[str]:
        return {f"{self.prefix}{i}" for i in range(self.count)}


@dataclass(frozen=True)
class SpaceVar:
    """Module- or kernel-scope memory declaration (.const / .shared array)."""

    space: str  # ".const" or ".shared"
    align: int
    elem_type: str  # ".b32"
    name: str
    size: int  # element count

    def render(self) -> str:
        return f"{self.space} .align {self.align} {self.elem_type} {self.name}[{self.size}];"


@dataclass(frozen=True)
class KernelParam:
    name: str
    ptx_type: str = ".u64"

    def render(self) -> str:
        return f".param {self.ptx_type} {self.name}"


@dataclass
class KernelAst:
    name: str
    params: list[KernelParam] = field(default_factory=list)
    reg_decls: list[RegDecl] = field(default_factory=list)
    space_vars: list[SpaceVar] = field(default_factory=list)
    body: list[Instr] = field(default_factory=list)


@dataclass
class ModuleAst:
    version: str
    target: str
    address_size: int
    const_vars: list[SpaceVar] = field(default_factory=list)
    kernel: KernelAst = None


def render(module: ModuleAst) -> str:
    lines = [
        f".version {module.version}",
        f".target {module.target}",
        f".address_size {module.address_size}",
        "",
    ]
    for v in module.const_vars:
        lines.append(v.render())
    if module.const_vars:
        lines.append("")
    k = module.kernel
    lines.append(f".visible .entry {k.name}(")
    for i, p in enumerate(k.params):
        comma = "," if i < len(k.params) - 1 else ""
        lines.append(f"    {p.render()}{comma}")
    lines.append(")")
    lines.append("{")
    for d in k.reg_decls:
        lines.append(f"    {d.render()}")
    for v in k.space_vars:
        lines.append(f"    {v.render()}")
    lines.append("")
    for ins in k.body:
        lines.append(f"    {ins.render()}")
    lines.append("}")
    return "\n".join(lines) + "\n"


def f32_imm(value: float) -> Imm:
    """Exact single-precision immediate in PTX hex-float form."""
    bits = struct.unpack("<I", struct.pack("<f", value))[0]
    return Imm(f"0f{bits:08X}")


def f64_imm(value: float) -> Imm:
    bits = struct.unpack("<Q", struct.pack("<d", value))[0]
    return Imm(f"0d{bits:016X}")


def f16_imm(value: float) -> Imm:
    """Half-precision bit pattern as a plain hex immediate (moved via .b16)."""
    bits = struct.unpack("<H", struct.pack("<e", value))[0]
    return Imm(f"0x{bits:04X}")
