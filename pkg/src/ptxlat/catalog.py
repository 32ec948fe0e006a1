"""Catalog of instruction variants and memory probes measured by the harness.

Every benchmarked operation is described once, as an immutable
InstructionDescriptor. Descriptors drive PTX generation, fixture naming,
and reporting. Reported results are re-merged under ``report_group``
labels: several mnemonics share one label when the reference tables list
them on a single row (each is still generated and timed on its own).

Coverage is exactly the rows of the bundled reference tables expanded by
their stated variants: 68 descriptors across eight categories. Other PTX
opcodes (loads/stores aside from the memory probes, predicates, conversions,
atomics, warp ops, ...) are deliberately uncataloged.

Division is special-cased twice. First, signed and unsigned integer
division are separate descriptors because their latencies differ; other
instructions get one canonical signedness. Second, each division data type
has a ``regular`` (power-of-two divisor, strength-reduced by the compiler)
and an ``irregular`` variant; the "(average)" figures in reports are derived
by the analysis layer and are never descriptors here.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional

from .errors import UnknownInstruction


class InstructionCategory(Enum):
    """The eight report categories, in table order."""

    INT_ARITH = ("int_arith", 1, "Integer Arithmetic Instructions")
    LOGIC_SHIFT = ("logic_shift", 2, "Logic and Shift Instructions")
    FP32 = ("fp32", 3, "Floating Single Precision Instructions")
    FP64 = ("fp64", 4, "Double Precision Instructions")
    FP16 = ("fp16", 5, "Half Precision Instructions")
    MULTI_PRECISION = ("multi_precision", 6, "Multi Precision Instructions")
    SPECIAL_MATH = ("special_math", 7, "Special Mathematical Instructions")
    INT_INTRINSIC = ("int_intrinsic", 8, "Integer Intrinsic Instructions")

    def __init__(self, key: str, index: int, heading: str):
        self.key = key
        self.index = index
        self.heading = heading

    @classmethod
    def from_key(cls, key: str) -> "InstructionCategory":
        for c in cls:
            if c.key == key:
                return c
        raise KeyError(key)


class DataType(Enum):
    U32 = "u32"
    S32 = "s32"
    U64 = "u64"
    S64 = "s64"
    F16 = "f16"
    F32 = "f32"
    F64 = "f64"
    PRED = "pred"


class Signedness(Enum):
    SIGNED = "signed"
    UNSIGNED = "unsigned"
    NA = "n/a"


class DivVariant(Enum):
    """Divisor class for division kernels. The reported average is derived,
    not a variant of its own."""

    REGULAR = "regular"
    IRREGULAR = "irregular"


class MemoryProbeKind(Enum):
    GLOBAL_MEMORY = "global_memory"
    L1_HIT = "l1_hit"
    L2_HIT = "l2_hit"
    TEXTURE_MEMORY = "texture_memory"
    TEXTURE_CACHE_HIT = "texture_cache_hit"
    SHARED_MEMORY = "shared_memory"
    CONSTANT_MEMORY = "constant_memory"
    CLOCK_OVERHEAD = "clock_overhead"


# L1_HIT and L2_HIT come from the same generated kernel: its second load is
# an L1 hit when built with L1 caching on and an L2 hit when built with L1
# bypassed, so only these probe kinds map to actual emitted kernels.
GENERATED_PROBES = (
    MemoryProbeKind.CLOCK_OVERHEAD,
    MemoryProbeKind.GLOBAL_MEMORY,
    MemoryProbeKind.SHARED_MEMORY,
    MemoryProbeKind.CONSTANT_MEMORY,
    MemoryProbeKind.TEXTURE_MEMORY,
)

BASE_COMPUTE_CAPABILITY = 3.5
FP16_MIN_COMPUTE_CAPABILITY = 6.0


@dataclass(frozen=True)
class InstructionDescriptor:
    """One benchmarked instruction variant.

    ``is_intrinsic`` marks operations cataloged under their C-style
    intrinsic name; codegen realizes them through a fixed PTX expansion
    sequence. ``report_group`` is the reference-table row label the
    measurement is reported under.
    """

    mnemonic: str
    category: InstructionCategory
    data_type: DataType
    signedness: Signedness
    operand_arity: int
    report_group: str
    div_variant: Optional[DivVariant] = None
    is_intrinsic: bool = False
    min_compute_capability: float = BASE_COMPUTE_CAPABILITY

    def __post_init__(self):
        if (self.div_variant is not None) != (self.mnemonic == "div"):
            raise ValueError(
                f"div_variant must be set exactly for div, got {self.mnemonic}"
            )

    @property
    def kernel_id(self) -> str:
        parts = [self.category.key, self.mnemonic, self.data_type.value]
        if self.div_variant is not None:
            parts.append(self.div_variant.value)
        return "__".join(parts)

    @property
    def sort_key(self):
        return (
            self.category.index,
            self.mnemonic,
            self.data_type.value,
            self.div_variant.value if self.div_variant else "",
        )


def _d(mnemonic, category, dtype, sign, arity, group, **kw) -> InstructionDescriptor:
    return InstructionDescriptor(
        mnemonic=mnemonic,
        category=category,
        data_type=dtype,
        signedness=sign,
        operand_arity=arity,
        report_group=group,
        **kw,
    )


def _build_catalog() -> tuple[InstructionDescriptor, ...]:
    C = InstructionCategory
    T = DataType
    S = Signedness
    out: list[InstructionDescriptor] = []

    # (1) Integer arithmetic. Unsigned is canonical except where PTX only
    # defines the signed form (abs) or where signed/unsigned latencies
    # differ (div, rem).
    grp = "add / sub / min / max"
    for m in ("add", "sub", "min", "max"):
        out.append(_d(m, C.INT_ARITH, T.U32, S.UNSIGNED, 2, grp))
    for m in ("mul", "mad"):
        out.append(_d(m, C.INT_ARITH, T.U32, S.UNSIGNED, 3 if m == "mad" else 2, "mul / mad"))
    for dt, sign, tag in ((T.S32, S.SIGNED, "{s}"), (T.U32, S.UNSIGNED, "{u}")):
        for var in DivVariant:
            out.append(
                _d("div", C.INT_ARITH, dt, sign, 2, f"{tag} div ({var.value})", div_variant=var)
            )
        out.append(_d("rem", C.INT_ARITH, dt, sign, 2, f"{tag} rem"))
    out.append(_d("abs", C.INT_ARITH, T.S32, S.SIGNED, 1, "abs"))

    # (2) Logic and shift. PTX types these on untyped bits; u32 stands in.
    for m in ("and", "or", "not", "xor"):
        out.append(_d(m, C.LOGIC_SHIFT, T.U32, S.NA, 1 if m == "not" else 2, "and / or / not / xor"))
    out.append(_d("cnot", C.LOGIC_SHIFT, T.U32, S.NA, 1, "cnot"))
    for m in ("shl", "shr"):
        out.append(_d(m, C.LOGIC_SHIFT, T.U32, S.NA, 2, "shl/shr"))

    # (3) / (4) single and double precision float arithmetic.
    for cat, dt in ((C.FP32, T.F32), (C.FP64, T.F64)):
        for m in ("add", "sub", "min", "max"):
            out.append(_d(m, cat, dt, S.NA, 2, "add / sub / min / max"))
        for m in ("mul", "mad", "fma"):
            out.append(_d(m, cat, dt, S.NA, 2 if m == "mul" else 3, "mul / mad / fma"))
        for var in DivVariant:
            out.append(_d("div", cat, dt, S.NA, 2, f"div ({var.value})", div_variant=var))

    # (5) half precision, first available on compute capability 6.0 parts.
    for m, grp16 in (("add", "add / sub"), ("sub", "add / sub"), ("mul", "mul"), ("fma", "fma")):
        out.append(
            _d(
                m,
                C.FP16,
                T.F16,
                S.NA,
                3 if m == "fma" else 2,
                grp16,
                min_compute_capability=FP16_MIN_COMPUTE_CAPABILITY,
            )
        )

    # (6) multi precision (carry chains).
    for m in ("add.cc", "addc", "sub.cc"):
        out.append(_d(m, C.MULTI_PRECISION, T.U32, S.UNSIGNED, 2, "add.cc / addc / sub.cc"))
    out.append(_d("subc", C.MULTI_PRECISION, T.U32, S.UNSIGNED, 2, "subc"))
    for m in ("mad.cc", "madc"):
        out.append(_d(m, C.MULTI_PRECISION, T.U32, S.UNSIGNED, 3, "mad.cc/madc"))

    # (7) special math, all f32. Precise rcp/sqrt plus the fast approximate
    # family.
    special = [
        ("rcp", 1, "rcp"),
        ("sqrt", 1, "sqrt"),
        ("sqrt.approx", 1, "fast approximate sqrt"),
        ("rsqrt", 1, "fast approximate rsqrt"),
        ("sin", 1, "fast approximate sin/cos"),
        ("cos", 1, "fast approximate sin/cos"),
        ("lg2", 1, "fast approximate lg2"),
        ("ex2", 1, "fast approximate ex2"),
        ("copysign", 2, "copysign"),
    ]
    for m, arity, grp7 in special:
        out.append(_d(m, C.SPECIAL_MATH, T.F32, S.NA, arity, grp7))

    # (8) integer intrinsics, cataloged by intrinsic name and expanded to
    # PTX opcodes by codegen.
    intr = [
        ("mul24", T.S32, S.SIGNED, 2, "mul24() / mad24()"),
        ("mad24", T.S32, S.SIGNED, 3, "mul24() / mad24()"),
        ("mulhi", T.S32, S.SIGNED, 2, "mulhi()"),
        ("mul64hi", T.S64, S.SIGNED, 2, "mul64hi()"),
        ("sad", T.U32, S.UNSIGNED, 3, "sad()"),
        ("popc", T.U32, S.NA, 1, "popc()"),
        ("clz", T.U32, S.NA, 1, "clz()"),
        ("bfe", T.U32, S.UNSIGNED, 3, "bfe() / bfi()"),
        ("bfi", T.U32, S.UNSIGNED, 4, "bfe() / bfi()"),
        ("bfind", T.U32, S.UNSIGNED, 1, "bfind() / bbrev()"),
        ("brev", T.U32, S.NA, 1, "bfind() / bbrev()"),
    ]
    for m, dt, sign, arity, grp8 in intr:
        out.append(_d(m, C.INT_INTRINSIC, dt, sign, arity, grp8, is_intrinsic=True))

    return tuple(sorted(out, key=lambda d: d.sort_key))


DESCRIPTORS: tuple[InstructionDescriptor, ...] = _build_catalog()


def list_instructions(
    category: Optional[InstructionCategory] = None,
    gpu=None,
) -> list[InstructionDescriptor]:
    """All descriptors, optionally narrowed to one category and to what a
    given GPU can execute. Order is deterministic: category index, then
    mnemonic, data type, divisor variant.

    ``gpu`` is anything with a ``compute_capability`` attribute (a float
    also works, for convenience).
    """
    cc = None
    if gpu is not None:
        cc = gpu if isinstance(gpu, (int, float)) else gpu.compute_capability
    out = []
    for d in DESCRIPTORS:
        if category is not None and d.category is not category:
            continue
        if cc is not None and d.min_compute_capability > cc:
            continue
        out.append(d)
    return out


def descriptor_for(
    mnemonic: str,
    data_type: DataType | str,
    div_variant: Optional[DivVariant | str] = None,
) -> InstructionDescriptor:
    """The unique descriptor for (mnemonic, data type).

    Division needs ``div_variant`` as well, since each data type carries a
    regular and an irregular descriptor.
    """
    if isinstance(data_type, str):
        data_type = DataType(data_type)
    if isinstance(div_variant, str):
        div_variant = DivVariant(div_variant)
    matches = [
        d
        for d in DESCRIPTORS
        if d.mnemonic == mnemonic
        and d.data_type is data_type
        and (div_variant is None or d.div_variant is div_variant)
    ]
    if len(matches) == 1:
        return matches[0]
    if not matches:
        raise UnknownInstruction(f"({mnemonic}, {data_type.value}) is not cataloged")
    raise UnknownInstruction(
        f"({mnemonic}, {data_type.value}) matches {len(matches)} descriptors; "
        "pass div_variant='regular' or 'irregular'"
    )


def descriptors_for_group(category: InstructionCategory, report_group: str):
    return [
        d for d in DESCRIPTORS if d.category is category and d.report_group == report_group
    ]


def probe_kernel_id(kind: MemoryProbeKind, l1_enabled: Optional[bool] = None) -> str:
    base = f"probe__{kind.value}"
    if kind is MemoryProbeKind.GLOBAL_MEMORY and l1_enabled is not None:
        base += "__l1on" if l1_enabled else "__l1off"
    return base


@dataclass(frozen=True)
class KernelIdentity:
    """Decoded kernel id: either an instruction descriptor or a probe."""

    kernel_id: str
    descriptor: Optional[InstructionDescriptor] = None
    probe: Optional[MemoryProbeKind] = None
    l1_enabled: Optional[bool] = None


def parse_kernel_id(kernel_id: str) -> KernelIdentity:
    """Inverse of descriptor.kernel_id / probe_kernel_id."""
    parts = kernel_id.split("__")
    if parts[0] == "probe":
        if len(parts) < 2:
            raise UnknownInstruction(f"malformed probe kernel id {kernel_id!r}")
        kind = MemoryProbeKind(parts[1])
        l1 = None
        if len(parts) == 3:
            if parts[2] not in ("l1on", "l1off"):
                raise UnknownInstruction(f"malformed probe kernel id {kernel_id!r}")
            l1 = parts[2] == "l1on"
        return KernelIdentity(kernel_id=kernel_id, probe=kind, l1_enabled=l1)
    if len(parts) not in (3, 4):
        raise UnknownInstruction(f"malformed kernel id {kernel_id!r}")
    _category, mnemonic, dtype = parts[0], parts[1], parts[2]
    variant = parts[3] if len(parts) == 4 else None
    desc = descriptor_for(mnemonic, dtype, variant)
    if desc.category.key != _category:
        raise UnknownInstruction(
            f"kernel id {kernel_id!r} names category {_category!r}, "
            f"catalog says {desc.category.key!r}"
        )
    return KernelIdentity(kernel_id=kernel_id, descriptor=desc)


def report_groups(category: Optional[InstructionCategory] = None) -> list[tuple]:
    """(category, report_group) pairs in deterministic report order."""
    seen: dict[tuple, None] = {}
    for d in DESCRIPTORS:
        if category is not None and d.category is not category:
            continue
        seen.setdefault((d.category, d.report_group))
    return list(seen)


def iter_categories() -> Iterable[InstructionCategory]:
    return sorted(InstructionCategory, key=lambda c: c.index)
