"""Clock-sandwich PTX kernel generation.

Every kernel follows the same timing discipline: read the per-SM cycle
counter into a register, run the payload (one instruction for ALU kernels,
one load/fetch for memory probes, nothing at all for the calibration
kernel), read the counter again, and store end - start to an output
parameter. A memory fence plus a thread barrier bracket each sandwich so
the assembler cannot migrate instructions across it, and every ALU result
feeds a dependent dummy operation whose value is also stored, so dead-code
elimination cannot drop the timed instruction at high optimization levels.

The counter is the 32-bit %clock special register and the delta is computed
in 32-bit modular arithmetic; a single wraparound between the two reads is
therefore harmless, and all measured latencies are far below 2**32.

Operand values default to kernel parameters, which are opaque to the
compiler, so constant folding cannot remove the payload. Division kernels
are the deliberate exception: the divisor is an immediate, because the
point is to let strength reduction fire for power-of-two divisors.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence

from ..analysis import classify_divisor
from ..catalog import (
    DataType,
    DivVariant,
    InstructionDescriptor,
    MemoryProbeKind,
    probe_kernel_id,
)
from ..errors import UnsupportedOnTarget, ZeroDivisor
from .ast import (
    Imm,
    Instr,
    KernelAst,
    KernelParam,
    MemRef,
    ModuleAst,
    Reg,
    RegDecl,
    SpaceVar,
    TexRef,
    VecReg,
    f16_imm,
    f32_imm,
    f64_imm,
    render,
)

PTX_VERSION = "6.4"
DEFAULT_ARCH = "sm_70"

#: Byte distance between the two global/texture loads: a different word of
#: the same cache line on every supported part (minimum line is 32 bytes).
SAME_LINE_OFFSET_BYTES = 4
MIN_CACHE_LINE_BYTES = 32


class KernelKind(Enum):
    ALU = "alu"
    DIV = "div"
    CLOCK_OVERHEAD = "clock_overhead"
    GLOBAL_MEMORY = "global_memory"
    SHARED_MEMORY = "shared_memory"
    CONSTANT_MEMORY = "constant_memory"
    TEXTURE_MEMORY = "texture_memory"


@dataclass(frozen=True)
class TimingBlock:
    """Metadata for one sandwich: which registers hold the two counter
    samples, what sits between them, and where the delta lands."""

    start_clock_reg: str
    end_clock_reg: str
    timed_instructions: tuple[Instr, ...]
    result_reg: str


@dataclass(frozen=True)
class ParamInfo:
    """Kernel parameter with launcher-facing semantics. ``output_name`` is
    the RESULT-line name for out parameters."""

    name: str
    role: str  # "in" | "out" | "tex"
    elem: str  # element type: u32, s32, u64, s64, f16, f32, f64
    array_len: int = 1
    output_name: Optional[str] = None


@dataclass
class PtxModule:
    """Generated module: rendered text plus the structural facts the
    validator and the toolchain need."""

    text: str
    entry_name: str
    kernel_id: str
    kind: KernelKind
    params: list[ParamInfo]
    timing_blocks: list[TimingBlock]
    target_version: str
    target_arch: str
    ast: ModuleAst
    descriptor: Optional[InstructionDescriptor] = None
    divisor_class: Optional[DivVariant] = None
    min_compute_capability: float = 3.5

    @property
    def output_params(self) -> list[ParamInfo]:
        return [p for p in self.params if p.role == "out"]


# --------------------------------------------------------------------------
# registers
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RegClass:
    decl_type: str
    prefix: str


B16 = RegClass(".b16", "%h")
B32 = RegClass(".b32", "%r")
B64 = RegClass(".b64", "%rd")
F32 = RegClass(".f32", "%f")
F64 = RegClass(".f64", "%fd")
PRED = RegClass(".pred", "%p")


class RegisterAllocator:
    """Unique names per register class, starting at index 1."""

    def __init__(self):
        self._counters: dict[RegClass, int] = {}

    def new(self, cls: RegClass) -> Reg:
        idx = self._counters.get(cls, 0) + 1
        self._counters[cls] = idx
        return Reg(f"{cls.prefix}{idx}")

    def decls(self) -> list[RegDecl]:
        out = []
        for cls in (B16, B32, B64, F32, F64, PRED):
            n = self._counters.get(cls)
            if n:
                out.append(RegDecl(cls.decl_type, cls.prefix, n + 1))
        return out


@dataclass(frozen=True)
class _Traits:
    reg_class: RegClass
    suffix: str  # type suffix used for ld/st/mov
    dummy_op: str  # dependent dummy consuming the result


_TRAITS = {
    DataType.U32: _Traits(B32, "u32", "add.u32"),
    DataType.S32: _Traits(B32, "s32", "add.s32"),
    DataType.U64: _Traits(B64, "u64", "add.u64"),
    DataType.S64: _Traits(B64, "s64", "add.s64"),
    DataType.F32: _Traits(F32, "f32", "add.f32"),
    DataType.F64: _Traits(F64, "f64", "add.f64"),
    DataType.F16: _Traits(B16, "b16", "add.f16"),
}

# Fixed expansion from catalog mnemonics to the PTX opcode sequence timed
# inside the sandwich. Every current entry is a single opcode; intrinsic
# rows are cataloged by their C-style names, which is why the table exists.
_EXPANSION: dict[tuple[str, DataType], tuple[str, ...]] = {}


def _exp(mnemonic, dtype, *opcodes):
    _EXPANSION[(mnemonic, dtype)] = tuple(opcodes)


for _dt in (DataType.U32, DataType.S32):
    _s = _dt.value
    _exp("add", _dt, f"add.{_s}")
    _exp("sub", _dt, f"sub.{_s}")
    _exp("min", _dt, f"min.{_s}")
    _exp("max", _dt, f"max.{_s}")
    _exp("mul", _dt, f"mul.lo.{_s}")
    _exp("mad", _dt, f"mad.lo.{_s}")
    _exp("div", _dt, f"div.{_s}")
    _exp("rem", _dt, f"rem.{_s}")
_exp("abs", DataType.S32, "abs.s32")

_exp("and", DataType.U32, "and.b32")
_exp("or", DataType.U32, "or.b32")
_exp("not", DataType.U32, "not.b32")
_exp("xor", DataType.U32, "xor.b32")
_exp("cnot", DataType.U32, "cnot.b32")
_exp("shl", DataType.U32, "shl.b32")
_exp("shr", DataType.U32, "shr.u32")

for _dt in (DataType.F32, DataType.F64):
    _s = _dt.value
    _exp("add", _dt, f"add.{_s}")
    _exp("sub", _dt, f"sub.{_s}")
    _exp("min", _dt, f"min.{_s}")
    _exp("max", _dt, f"max.{_s}")
    _exp("mul", _dt, f"mul.{_s}")
    _exp("mad", _dt, f"mad.rn.{_s}")
    _exp("fma", _dt, f"fma.rn.{_s}")
    _exp("div", _dt, f"div.rn.{_s}")

_exp("add", DataType.F16, "add.f16")
_exp("sub", DataType.F16, "sub.f16")
_exp("mul", DataType.F16, "mul.f16")
_exp("fma", DataType.F16, "fma.rn.f16")

_exp("add.cc", DataType.U32, "add.cc.u32")
_exp("addc", DataType.U32, "addc.u32")
_exp("sub.cc", DataType.U32, "sub.cc.u32")
_exp("subc", DataType.U32, "subc.u32")
_exp("mad.cc", DataType.U32, "mad.lo.cc.u32")
_exp("madc", DataType.U32, "madc.lo.u32")

_exp("rcp", DataType.F32, "rcp.rn.f32")
_exp("sqrt", DataType.F32, "sqrt.rn.f32")
_exp("sqrt.approx", DataType.F32, "sqrt.approx.f32")
_exp("rsqrt", DataType.F32, "rsqrt.approx.f32")
_exp("sin", DataType.F32, "sin.approx.f32")
_exp("cos", DataType.F32, "cos.approx.f32")
_exp("lg2", DataType.F32, "lg2.approx.f32")
_exp("ex2", DataType.F32, "ex2.approx.f32")
_exp("copysign", DataType.F32, "copysign.f32")

_exp("mul24", DataType.S32, "mul24.lo.s32")
_exp("mad24", DataType.S32, "mad24.lo.s32")
_exp("mulhi", DataType.S32, "mul.hi.s32")
_exp("mul64hi", DataType.S64, "mul.hi.s64")
_exp("sad", DataType.U32, "sad.u32")
_exp("popc", DataType.U32, "popc.b32")
_exp("clz", DataType.U32, "clz.b32")
_exp("bfe", DataType.U32, "bfe.u32")
_exp("bfi", DataType.U32, "bfi.b32")
_exp("bfind", DataType.U32, "bfind.u32")
_exp("brev", DataType.U32, "brev.b32")


def defining_sequence(desc: InstructionDescriptor) -> tuple[str, ...]:
    """PTX opcodes realizing one descriptor (length 1 for every current
    catalog entry)."""
    return _EXPANSION[(desc.mnemonic, desc.data_type)]


_DEFAULT_INT_LITERALS = (7, 3, 5, 2)
_DEFAULT_FLOAT_LITERALS = (7.5, 3.25, 1.5, 2.0)


@dataclass(frozen=True)
class OperandPolicy:
    """Where timed-instruction operands come from: opaque kernel parameters
    (default) or compile-time literals moved into registers."""

    mode: str = "params"
    values: Optional[tuple] = None

    @classmethod
    def params(cls) -> "OperandPolicy":
        return cls(mode="params")

    @classmethod
    def literals(cls, values: Optional[Sequence] = None) -> "OperandPolicy":
        return cls(mode="literals", values=tuple(values) if values else None)


def _literal_imm(dtype: DataType, value) -> Imm:
    if dtype is DataType.F32:
        return f32_imm(float(value))
    if dtype is DataType.F64:
        return f64_imm(float(value))
    if dtype is DataType.F16:
        return f16_imm(float(value))
    return Imm(str(int(value)))


def _arch_cc(arch: str) -> float:
    return int(arch.removeprefix("sm_")) / 10.0


def _entry_name(kernel_id: str) -> str:
    return kernel_id.replace(".", "_")


class _Builder:
    """Accumulates one kernel; finalize() renders and packages it."""

    def __init__(self, kernel_id: str, kind: KernelKind, arch: str, min_cc: float = 3.5):
        self.kernel_id = kernel_id
        self.kind = kind
        self.arch = arch
        self.min_cc = min_cc
        self.entry = _entry_name(kernel_id)
        self.alloc = RegisterAllocator()
        self.body: list[Instr] = []
        self.params: list[ParamInfo] = []
        self.param_regs: dict[str, Reg] = {}
        self.space_vars: list[SpaceVar] = []
        self.const_vars: list[SpaceVar] = []
        self.blocks: list[TimingBlock] = []

    def add_param(self, role: str, elem: str, array_len: int = 1, output_name=None) -> str:
        name = f"{self.entry}_param_{len(self.params)}"
        self.params.append(ParamInfo(name, role, elem, array_len, output_name))
        return name

    def load_params(self):
        for p in self.params:
            rd = self.alloc.new(B64)
            self.param_regs[p.name] = rd
            self.body.append(Instr("ld.param.u64", (rd, MemRef(p.name))))

    def emit(self, opcode: str, *operands):
        self.body.append(Instr(opcode, tuple(operands)))

    def barrier_pair(self):
        self.emit("membar.gl")
        self.emit("bar.sync", Imm("0"))

    def sandwich(self, timed: list[Instr]) -> tuple[Reg, Reg, Reg]:
        """Emit barriers, clock read, payload, clock read, barriers, and the
        delta subtraction. Returns (start, end, delta) registers."""
        start = self.alloc.new(B32)
        end = self.alloc.new(B32)
        self.barrier_pair()
        self.emit("mov.u32", start, Reg("%clock"))
        self.body.extend(timed)
        self.emit("mov.u32", end, Reg("%clock"))
        self.barrier_pair()
        delta = self.alloc.new(B32)
        self.emit("sub.s32", delta, end, start)
        self.blocks.append(
            TimingBlock(start.name, end.name, tuple(timed), delta.name)
        )
        return start, end, delta

    def store_u32(self, param_name: str, reg: Reg, offset: int = 0):
        self.emit("st.global.u32", MemRef(self.param_regs[param_name].name, offset), reg)

    def finalize(self, descriptor=None, divisor_class=None) -> PtxModule:
        self.body.append(Instr("ret"))
        kernel = KernelAst(
            name=self.entry,
            params=[KernelParam(p.name) for p in self.params],
            reg_decls=self.alloc.decls(),
            space_vars=self.space_vars,
            body=self.body,
        )
        ast = ModuleAst(
            version=PTX_VERSION,
            target=self.arch,
            address_size=64,
            const_vars=self.const_vars,
            kernel=kernel,
        )
        return PtxModule(
            text=render(ast),
            entry_name=self.entry,
            kernel_id=self.kernel_id,
            kind=self.kind,
            params=self.params,
            timing_blocks=self.blocks,
            target_version=PTX_VERSION,
            target_arch=self.arch,
            ast=ast,
            descriptor=descriptor,
            divisor_class=divisor_class,
            min_compute_capability=self.min_cc,
        )


# --------------------------------------------------------------------------
# emitters
# --------------------------------------------------------------------------

def emit_clock_overhead_kernel(arch: str = DEFAULT_ARCH) -> PtxModule:
    """Empty sandwich: two back-to-back clock reads, delta stored as-is.
    Its median is the calibration constant subtracted from every other
    measurement."""
    b = _Builder(probe_kernel_id(MemoryProbeKind.CLOCK_OVERHEAD), KernelKind.CLOCK_OVERHEAD, arch)
    out = b.add_param("out", "u32", output_name="cycles")
    b.load_params()
    _, _, delta = b.sandwich([])
    b.store_u32(out, delta)
    return b.finalize()


def _operand_regs(b: _Builder, desc: InstructionDescriptor, policy: OperandPolicy,
                  arity: int) -> list[Reg]:
    traits = _TRAITS[desc.data_type]
    regs = []
    if policy.mode == "params":
        in_params = [p for p in b.params if p.role == "in"]
        for i in range(arity):
            r = b.alloc.new(traits.reg_class)
            b.emit(f"ld.global.{traits.suffix}", r, MemRef(b.param_regs[in_params[i].name].name))
            regs.append(r)
    else:
        defaults = (
            _DEFAULT_FLOAT_LITERALS
            if desc.data_type in (DataType.F16, DataType.F32, DataType.F64)
            else _DEFAULT_INT_LITERALS
        )
        values = policy.values or defaults
        for i in range(arity):
            r = b.alloc.new(traits.reg_class)
            b.emit(f"mov.{traits.suffix}", r, _literal_imm(desc.data_type, values[i % len(values)]))
            regs.append(r)
    return regs


def _check_target(desc: InstructionDescriptor, arch: str):
    if desc.min_compute_capability > _arch_cc(arch):
        raise UnsupportedOnTarget(
            f"{desc.mnemonic}.{desc.data_type.value} needs compute capability "
            f">= {desc.min_compute_capability}, target {arch} has {_arch_cc(arch)}"
        )


def _emit_alu_like(
    desc: InstructionDescriptor,
    policy: OperandPolicy,
    arch: str,
    kind: KernelKind,
    kernel_id: str,
    divisor: Optional[Imm] = None,
    divisor_class: Optional[DivVariant] = None,
) -> PtxModule:
    _check_target(desc, arch)
    traits = _TRAITS[desc.data_type]
    (opcode,) = defining_sequence(desc)

    b = _Builder(kernel_id, kind, arch, desc.min_compute_capability)
    n_loaded = desc.operand_arity - (1 if divisor is not None else 0)
    if policy.mode == "params":
        for _ in range(n_loaded):
            b.add_param("in", desc.data_type.value)
    out_cycles = b.add_param("out", "u32", output_name="cycles")
    out_sink = b.add_param("out", desc.data_type.value, output_name="sink")
    b.load_params()

    srcs: list = list(_operand_regs(b, desc, policy, n_loaded))
    if divisor is not None:
        srcs.append(divisor)
    dest = b.alloc.new(traits.reg_class)
    timed = [Instr(opcode, (dest, *srcs))]
    _, _, delta = b.sandwich(timed)

    sink = b.alloc.new(traits.reg_class)
    b.emit(traits.dummy_op, sink, dest, dest)
    b.store_u32(out_cycles, delta)
    b.emit(f"st.global.{traits.suffix}", MemRef(b.param_regs[out_sink].name), sink)
    return b.finalize(descriptor=desc, divisor_class=divisor_class)


def emit_alu_kernel(
    desc: InstructionDescriptor,
    operands: OperandPolicy = OperandPolicy.params(),
    arch: str = DEFAULT_ARCH,
) -> PtxModule:
    """Sandwich around exactly one arithmetic/logic/intrinsic operation.
    Division descriptors route through emit_div_kernel with a divisor
    matching the descriptor's variant."""
    if desc.mnemonic == "div":
        divisor = 8 if desc.div_variant is DivVariant.REGULAR else 7
        return emit_div_kernel(desc, divisor, operands=operands, arch=arch)
    return _emit_alu_like(desc, operands, arch, KernelKind.ALU, desc.kernel_id)


def emit_div_kernel(
    desc: InstructionDescriptor,
    divisor,
    operands: OperandPolicy = OperandPolicy.params(),
    arch: str = DEFAULT_ARCH,
) -> PtxModule:
    """Division sandwich with the divisor as an immediate so the assembler's
    strength reduction can fire on power-of-two values."""
    if desc.mnemonic != "div":
        raise ValueError(f"emit_div_kernel needs a div descriptor, got {desc.mnemonic}")
    if divisor == 0:
        raise ZeroDivisor("division kernels need a nonzero divisor")
    divisor_class = classify_divisor(divisor)
    return _emit_alu_like(
        desc,
        operands,
        arch,
        KernelKind.DIV,
        desc.kernel_id,
        divisor=_literal_imm(desc.data_type, divisor),
        divisor_class=divisor_class,
    )


def emit_global_memory_kernel(arch: str = DEFAULT_ARCH) -> PtxModule:
    """Two sandwiches over global loads: the first is a cold miss that walks
    down to device memory; the second reads a different word of the same
    cache line, so it hits in L1 or L2 depending on how the module is built.
    """
    b = _Builder(probe_kernel_id(MemoryProbeKind.GLOBAL_MEMORY), KernelKind.GLOBAL_MEMORY, arch)
    data = b.add_param("in", "u32", array_len=64)
    out_cold = b.add_param("out", "u32", output_name="cycles_cold")
    out_hit = b.add_param("out", "u32", output_name="cycles_hit")
    b.load_params()

    base = b.param_regs[data].name
    v0 = b.alloc.new(B32)
    _, _, delta_cold = b.sandwich([Instr("ld.global.u32", (v0, MemRef(base, 0)))])
    v1 = b.alloc.new(B32)
    _, _, delta_hit = b.sandwich(
        [Instr("ld.global.u32", (v1, MemRef(base, SAME_LINE_OFFSET_BYTES)))]
    )
    b.store_u32(out_cold, delta_cold)
    b.store_u32(out_hit, delta_hit)
    return b.finalize()


def emit_shared_kernel(arch: str = DEFAULT_ARCH) -> PtxModule:
    """Shared-memory hit: the word is stored outside the timed region, then
    a single ld.shared sits in the sandwich."""
    b = _Builder(probe_kernel_id(MemoryProbeKind.SHARED_MEMORY), KernelKind.SHARED_MEMORY, arch)
    out = b.add_param("out", "u32", output_name="cycles")
    b.space_vars.append(SpaceVar(".shared", 4, ".b32", "shared_scratch", 32))
    b.load_params()

    seed = b.alloc.new(B32)
    b.emit("mov.u32", seed, Imm("42"))
    b.emit("st.shared.u32", MemRef("shared_scratch"), seed)
    v = b.alloc.new(B32)
    _, _, delta = b.sandwich([Instr("ld.shared.u32", (v, MemRef("shared_scratch")))])
    b.store_u32(out, delta)
    return b.finalize()


def emit_constant_kernel(arch: str = DEFAULT_ARCH) -> PtxModule:
    """Constant-memory read from a module-scope .const symbol."""
    b = _Builder(probe_kernel_id(MemoryProbeKind.CONSTANT_MEMORY), KernelKind.CONSTANT_MEMORY, arch)
    out = b.add_param("out", "u32", output_name="cycles")
    b.const_vars.append(SpaceVar(".const", 4, ".b32", "const_data", 8))
    b.load_params()

    v = b.alloc.new(B32)
    _, _, delta = b.sandwich([Instr("ld.const.u32", (v, MemRef("const_data")))])
    b.store_u32(out, delta)
    return b.finalize()


def emit_texture_kernel(arch: str = DEFAULT_ARCH) -> PtxModule:
    """Texture fetches through a bound 1-D texture handle: a cold fetch and
    a second fetch of the adjacent texel in the same line (texture-cache
    hit). Binding and addressing setup live in the generated host launcher.
    """
    b = _Builder(probe_kernel_id(MemoryProbeKind.TEXTURE_MEMORY), KernelKind.TEXTURE_MEMORY, arch)
    tex = b.add_param("tex", "u32", array_len=64)
    out_cold = b.add_param("out", "u32", output_name="cycles_cold")
    out_hit = b.add_param("out", "u32", output_name="cycles_hit")
    b.load_params()
    handle = b.param_regs[tex]

    def fetch(coord_value: str):
        coord = b.alloc.new(B32)
        b.emit("mov.u32", coord, Imm(coord_value))
        dest = VecReg(tuple(b.alloc.new(B32) for _ in range(4)))
        return Instr("tex.1d.v4.u32.s32", (dest, TexRef(handle, (coord,))))

    first = fetch("0")
    _, _, delta_cold = b.sandwich([first])
    second = fetch("1")
    _, _, delta_hit = b.sandwich([second])
    b.store_u32(out_cold, delta_cold)
    b.store_u32(out_hit, delta_hit)
    return b.finalize()


def emit_probe_kernel(kind: MemoryProbeKind, arch: str = DEFAULT_ARCH) -> PtxModule:
    emitters = {
        MemoryProbeKind.CLOCK_OVERHEAD: emit_clock_overhead_kernel,
        MemoryProbeKind.GLOBAL_MEMORY: emit_global_memory_kernel,
        MemoryProbeKind.SHARED_MEMORY: emit_shared_kernel,
        MemoryProbeKind.CONSTANT_MEMORY: emit_constant_kernel,
        MemoryProbeKind.TEXTURE_MEMORY: emit_texture_kernel,
    }
    if kind not in emitters:
        raise ValueError(f"probe {kind.value} has no kernel of its own")
    return emitters[kind](arch=arch)


def remake_text(module: PtxModule) -> PtxModule:
    """Re-render a module whose AST was edited (used for mutation tests)."""
    return replace(module, text=render(module.ast))
