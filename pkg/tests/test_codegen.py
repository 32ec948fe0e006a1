import pytest

from ptxlat.catalog import (
    DESCRIPTORS,
    DivVariant,
    MemoryProbeKind,
    descriptor_for,
)
from ptxlat.errors import UnsupportedOnTarget, ZeroDivisor
from ptxlat.ptxgen import codegen
from ptxlat.ptxgen.ast import MemRef, Reg
from ptxlat.ptxgen.codegen import (
    MIN_CACHE_LINE_BYTES,
    OperandPolicy,
    SAME_LINE_OFFSET_BYTES,
    defining_sequence,
)
from ptxlat.ptxgen.validator import validate_ptx


# -- clock overhead ----------------------------------------------------------

def test_clock_overhead_kernel_has_empty_sandwich():
    m = codegen.emit_clock_overhead_kernel()
    assert len(m.timing_blocks) == 1
    assert m.timing_blocks[0].timed_instructions == ()


def test_clock_overhead_kernel_has_exactly_two_clock_reads():
    m = codegen.emit_clock_overhead_kernel()
    assert m.text.count("%clock") == 2


def test_clock_overhead_kernel_self_validates():
    assert validate_ptx(codegen.emit_clock_overhead_kernel()) == []


# -- ALU kernels ---------------------------------------------------------------

def test_add_u32_timed_region_is_single_add():
    m = codegen.emit_alu_kernel(descriptor_for("add", "u32"), OperandPolicy.literals())
    (block,) = m.timing_blocks
    assert len(block.timed_instructions) == 1
    assert block.timed_instructions[0].opcode == "add.u32"
    ops = block.timed_instructions[0].operands
    assert all(isinstance(o, Reg) for o in ops) and len(ops) == 3


def test_fp16_rejected_on_kepler_target():
    with pytest.raises(UnsupportedOnTarget):
        codegen.emit_alu_kernel(descriptor_for("add", "f16"), arch="sm_35")


def test_fp16_accepted_from_pascal():
    m = codegen.emit_alu_kernel(descriptor_for("add", "f16"), arch="sm_60")
    assert validate_ptx(m) == []
    assert "add.f16" in m.text


def test_popc_timed_region_and_dummy_dependence():
    m = codegen.emit_alu_kernel(descriptor_for("popc", "u32"))
    (block,) = m.timing_blocks
    assert [i.opcode for i in block.timed_instructions] == ["popc.b32"]
    dest = block.timed_instructions[0].operands[0]
    consumers = [
        ins
        for ins in m.ast.kernel.body
        if ins not in block.timed_instructions and dest in ins.operands
    ]
    assert consumers, "dummy consuming the popc result is missing"


def test_sandwich_minimality_for_every_descriptor():
    for desc in DESCRIPTORS:
        m = codegen.emit_alu_kernel(desc)
        (block,) = m.timing_blocks
        assert len(block.timed_instructions) == len(defining_sequence(desc))
        assert [i.opcode for i in block.timed_instructions] == list(defining_sequence(desc))


def test_barriers_bracket_sandwich():
    m = codegen.emit_alu_kernel(descriptor_for("xor", "u32"))
    body = m.ast.kernel.body
    (block,) = m.timing_blocks
    starts = [i for i, ins in enumerate(body) if ins.operands and ins.operands[0] == Reg(block.start_clock_reg)]
    ends = [i for i, ins in enumerate(body) if ins.operands and ins.operands[0] == Reg(block.end_clock_reg)]
    i_start, i_end = starts[0], ends[0]
    assert body[i_start - 2].opcode == "membar.gl"
    assert body[i_start - 1].base == "bar"
    assert body[i_end + 1].opcode == "membar.gl"
    assert body[i_end + 2].base == "bar"


def test_operands_default_to_params():
    m = codegen.emit_alu_kernel(descriptor_for("add", "u32"))
    in_params = [p for p in m.params if p.role == "in"]
    assert len(in_params) == 2
    assert m.text.count("ld.global.u32") == 2


def test_literal_operands_skip_input_params():
    m = codegen.emit_alu_kernel(descriptor_for("add", "u32"), OperandPolicy.literals((9, 4)))
    assert [p for p in m.params if p.role == "in"] == []
    assert "mov.u32         %r1, 9;" in m.text
    assert "mov.u32         %r2, 4;" in m.text


def test_alu_kernel_outputs_cycles_and_sink():
    m = codegen.emit_alu_kernel(descriptor_for("fma", "f32"))
    assert [p.output_name for p in m.output_params] == ["cycles", "sink"]


# -- div kernels -----------------------------------------------------------------

def test_div_power_of_two_divisor_is_regular():
    m = codegen.emit_div_kernel(descriptor_for("div", "s32", "regular"), 8)
    assert m.divisor_class is DivVariant.REGULAR
    assert "div.s32" in m.text and ", 8;" in m.text


def test_div_non_power_of_two_divisor_is_irregular():
    m = codegen.emit_div_kernel(descriptor_for("div", "s32", "irregular"), 7)
    assert m.divisor_class is DivVariant.IRREGULAR


def test_div_zero_divisor_rejected():
    with pytest.raises(ZeroDivisor):
        codegen.emit_div_kernel(descriptor_for("div", "s32", "regular"), 0)


def test_div_divisor_is_immediate_in_sandwich():
    m = codegen.emit_div_kernel(descriptor_for("div", "u32", "regular"), 16)
    (block,) = m.timing_blocks
    timed = block.timed_instructions[0]
    assert timed.opcode == "div.u32"
    assert timed.operands[-1].render() == "16"


def test_float_div_divisor_hex_immediate():
    m = codegen.emit_div_kernel(descriptor_for("div", "f32", "regular"), 8.0)
    (block,) = m.timing_blocks
    assert block.timed_instructions[0].operands[-1].render() == "0f41000000"
    assert m.divisor_class is DivVariant.REGULAR


# -- memory probes ------------------------------------------------------------------

def test_global_memory_kernel_two_blocks_single_loads():
    m = codegen.emit_global_memory_kernel()
    assert len(m.timing_blocks) == 2
    for block in m.timing_blocks:
        assert len(block.timed_instructions) == 1
        assert block.timed_instructions[0].opcode == "ld.global.u32"


def test_global_memory_second_load_same_line_different_word():
    m = codegen.emit_global_memory_kernel()
    first, second = (b.timed_instructions[0].operands[1] for b in m.timing_blocks)
    assert isinstance(first, MemRef) and isinstance(second, MemRef)
    assert first.base == second.base
    assert second.offset != first.offset
    assert 0 < abs(second.offset - first.offset) < MIN_CACHE_LINE_BYTES
    assert second.offset - first.offset == SAME_LINE_OFFSET_BYTES


def test_global_memory_outputs():
    m = codegen.emit_global_memory_kernel()
    assert [p.output_name for p in m.output_params] == ["cycles_cold", "cycles_hit"]


def test_shared_kernel_populates_then_times_load():
    m = codegen.emit_shared_kernel()
    (block,) = m.timing_blocks
    assert [i.opcode for i in block.timed_instructions] == ["ld.shared.u32"]
    body = m.ast.kernel.body
    st_idx = next(i for i, ins in enumerate(body) if ins.opcode == "st.shared.u32")
    ld_idx = next(i for i, ins in enumerate(body) if ins.opcode == "ld.shared.u32")
    assert st_idx < ld_idx, "shared memory must be populated outside the timed region"


def test_constant_kernel_reads_module_scope_symbol():
    m = codegen.emit_constant_kernel()
    (block,) = m.timing_blocks
    assert [i.opcode for i in block.timed_instructions] == ["ld.const.u32"]
    assert any(v.space == ".const" for v in m.ast.const_vars)


def test_texture_kernel_two_single_fetch_blocks():
    m = codegen.emit_texture_kernel()
    assert len(m.timing_blocks) == 2
    for block in m.timing_blocks:
        assert len(block.timed_instructions) == 1
        assert block.timed_instructions[0].opcode.startswith("tex.1d")
    assert any(p.role == "tex" for p in m.params)


def test_all_probe_kernels_self_validate():
    for kind in (
        MemoryProbeKind.CLOCK_OVERHEAD,
        MemoryProbeKind.GLOBAL_MEMORY,
        MemoryProbeKind.SHARED_MEMORY,
        MemoryProbeKind.CONSTANT_MEMORY,
        MemoryProbeKind.TEXTURE_MEMORY,
    ):
        assert validate_ptx(codegen.emit_probe_kernel(kind)) == [], kind


def test_ptx_header_pins_isa_and_target():
    m = codegen.emit_alu_kernel(descriptor_for("add", "u32"), arch="sm_35")
    assert m.text.startswith(".version 6.4\n.target sm_35\n.address_size 64\n")
