"""Structural validation of generated PTX.

The validator re-parses the module text from scratch (it never trusts the
AST the generator kept) and checks the properties the timing methodology
depends on:

* every line is inside the supported subset;
* declared registers cover all uses and nothing is read before written;
* each timing block is well nested (start read before end read), contains
  exactly the instructions its metadata promises, and has the delta
  subtraction reading exactly the two clock registers;
* a memory fence plus thread barrier sit immediately on both sides of every
  sandwich;
* for ALU/division kernels the timed result is consumed downstream (the
  dependent dummy), so the assembler cannot eliminate the payload;
* every output parameter is stored exactly once.

Diagnostics are data, not exceptions: a clean module yields an empty list.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .ast import Instr, MemRef, Reg, SPECIAL_REGISTERS, TexRef, VecReg
from .codegen import KernelKind, PtxModule
from .parser import parse

CODE_PARSE = "parse"
CODE_HEADER = "header"
CODE_UNDECLARED_REG = "undeclared-register"
CODE_READ_BEFORE_WRITE = "read-before-write"
CODE_TIMING_NESTING = "ill-nested-timing"
CODE_REGION_MISMATCH = "region-mismatch"
CODE_BARRIER = "barrier"
CODE_OUTPUT_STORE = "output-store"
CODE_DEAD_RESULT = "dead-result"


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str

    def __str__(self):
        return f"[{self.code}] {self.message}"


def _defs_uses(ins: Instr) -> tuple[set[str], set[str]]:
    """Register names defined and used by one instruction."""
    defs: set[str] = set()
    uses: set[str] = set()

    def use_operand(op):
        if isinstance(op, Reg):
            uses.add(op.name)
        elif isinstance(op, MemRef):
            if op.base.startswith("%"):
                uses.add(op.base)
        elif isinstance(op, VecReg):
            uses.update(r.name for r in op.regs)
        elif isinstance(op, TexRef):
            uses.add(op.handle.name)
            uses.update(r.name for r in op.coords)

    base = ins.base
    if base in ("bar", "membar", "ret"):
        return defs, uses
    if base == "st":
        for op in ins.operands:
            use_operand(op)
        return defs, uses
    # everything else writes its first operand
    if ins.operands:
        head = ins.operands[0]
        if isinstance(head, Reg):
            defs.add(head.name)
        elif isinstance(head, VecReg):
            defs.update(r.name for r in head.regs)
        for op in ins.operands[1:]:
            use_operand(op)
    return defs, uses


def _is_clock_read(ins: Instr, dest: str) -> bool:
    return (
        ins.base == "mov"
        and len(ins.operands) == 2
        and isinstance(ins.operands[0], Reg)
        and ins.operands[0].name == dest
        and isinstance(ins.operands[1], Reg)
        and ins.operands[1].name == "%clock"
    )


def validate_ptx(module: PtxModule) -> list[Diagnostic]:
    diags: list[Diagnostic] = []

    result = parse(module.text)
    for pd in result.diagnostics:
        diags.append(Diagnostic(CODE_PARSE, str(pd)))
    if result.module is None:
        return diags
    ast = result.module

    if ast.version != module.target_version:
        diags.append(
            Diagnostic(CODE_HEADER, f"version {ast.version!r} != {module.target_version!r}")
        )
    if ast.target != module.target_arch:
        diags.append(
            Diagnostic(CODE_HEADER, f"target {ast.target!r} != {module.target_arch!r}")
        )
    if ast.address_size != 64:
        diags.append(Diagnostic(CODE_HEADER, f"address size {ast.address_size} != 64"))

    kernel = ast.kernel
    declared: set[str] = set()
    for d in kernel.reg_decls:
        declared |= d.names()
    param_names = {p.name for p in kernel.params}
    symbols = {v.name for v in kernel.space_vars} | {v.name for v in ast.const_vars}

    expected_params = {p.name for p in module.params}
    if param_names != expected_params:
        diags.append(
            Diagnostic(
                CODE_HEADER,
                f"parameter list {sorted(param_names)} does not match metadata "
                f"{sorted(expected_params)}",
            )
        )

    # def/use walk over the straight-line body
    written: set[str] = set()
    reported_undeclared: set[str] = set()
    param_ptr: dict[str, str] = {}  # register -> parameter it addresses
    stores_to_param: dict[str, int] = {}

    for idx, ins in enumerate(kernel.body):
        # symbol operands must name a declared param or memory space var
        for op in ins.operands:
            if isinstance(op, MemRef) and not op.base.startswith("%"):
                if op.base not in param_names and op.base not in symbols:
                    diags.append(
                        Diagnostic(
                            CODE_UNDECLARED_REG,
                            f"symbol {op.base!r} used at instruction {idx} is not declared",
                        )
                    )
        defs, uses = _defs_uses(ins)
        for name in sorted(uses):
            if name in SPECIAL_REGISTERS:
                continue
            if name not in declared:
                if name not in reported_undeclared:
                    diags.append(
                        Diagnostic(
                            CODE_UNDECLARED_REG,
                            f"register {name} used but not declared",
                        )
                    )
                    reported_undeclared.add(name)
            elif name not in written:
                diags.append(
                    Diagnostic(
                        CODE_READ_BEFORE_WRITE,
                        f"register {name} read at instruction {idx} before any write",
                    )
                )
                written.add(name)  # report once
        for name in sorted(defs):
            if name not in declared and name not in SPECIAL_REGISTERS:
                if name not in reported_undeclared:
                    diags.append(
                        Diagnostic(
                            CODE_UNDECLARED_REG,
                            f"register {name} used but not declared",
                        )
                    )
                    reported_undeclared.add(name)
        written |= defs

        if ins.opcode == "ld.param.u64" and len(ins.operands) == 2:
            dest, src = ins.operands
            if isinstance(dest, Reg) and isinstance(src, MemRef):
                param_ptr[dest.name] = src.base
        if ins.base == "st" and ins.operands and isinstance(ins.operands[0], MemRef):
            target = param_ptr.get(ins.operands[0].base)
            if target is not None:
                stores_to_param[target] = stores_to_param.get(target, 0) + 1

    # output parameters stored exactly once
    for p in module.params:
        if p.role != "out":
            continue
        n = stores_to_param.get(p.name, 0)
        if n != 1:
            diags.append(
                Diagnostic(
                    CODE_OUTPUT_STORE,
                    f"output parameter {p.name} stored {n} times (want exactly 1)",
                )
            )

    _check_timing_blocks(module, kernel.body, diags)
    return diags


def _find_single(body, pred, what, diags) -> Optional[int]:
    hits = [i for i, ins in enumerate(body) if pred(ins)]
    if len(hits) != 1:
        diags.append(
            Diagnostic(CODE_TIMING_NESTING, f"{what}: found {len(hits)} candidates, want 1")
        )
        return None
    return hits[0]


def _check_timing_blocks(module: PtxModule, body: list[Instr], diags: list[Diagnostic]):
    for n, block in enumerate(module.timing_blocks):
        i_start = _find_single(
            body, lambda ins: _is_clock_read(ins, block.start_clock_reg),
            f"block {n} start clock read", diags,
        )
        i_end = _find_single(
            body, lambda ins: _is_clock_read(ins, block.end_clock_reg),
            f"block {n} end clock read", diags,
        )
        if i_start is None or i_end is None:
            continue
        if i_end <= i_start:
            diags.append(
                Diagnostic(
                    CODE_TIMING_NESTING,
                    f"ill-nested timing block {n}: end clock read precedes start",
                )
            )
            continue

        payload = body[i_start + 1 : i_end]
        expected = [ins.opcode for ins in block.timed_instructions]
        actual = [ins.opcode for ins in payload]
        if module.kind is KernelKind.CLOCK_OVERHEAD:
            if actual:
                diags.append(
                    Diagnostic(
                        CODE_REGION_MISMATCH,
                        f"calibration sandwich must be empty, found {actual}",
                    )
                )
        elif not actual:
            diags.append(
                Diagnostic(CODE_REGION_MISMATCH, f"block {n} sandwich is empty")
            )
        elif actual != expected:
            diags.append(
                Diagnostic(
                    CODE_REGION_MISMATCH,
                    f"block {n} sandwich {actual} does not match metadata {expected}",
                )
            )

        _check_barriers(n, body, i_start, i_end, diags)
        _check_result_sub(n, block, body, i_end, diags)
        _check_result_stored(n, block, body, diags)
        if module.kind in (KernelKind.ALU, KernelKind.DIV):
            _check_dependence(n, body, payload, i_end, diags)


def _check_barriers(n, body, i_start, i_end, diags):
    def bar_pair_at(i_fence, i_bar) -> bool:
        return (
            0 <= i_fence < len(body)
            and 0 <= i_bar < len(body)
            and body[i_fence].opcode == "membar.gl"
            and body[i_bar].base == "bar"
        )

    if not bar_pair_at(i_start - 2, i_start - 1):
        diags.append(
            Diagnostic(
                CODE_BARRIER,
                f"block {n} is not preceded by membar.gl + bar.sync",
            )
        )
    if not bar_pair_at(i_end + 1, i_end + 2):
        diags.append(
            Diagnostic(
                CODE_BARRIER,
                f"block {n} is not followed by membar.gl + bar.sync",
            )
        )


def _check_result_sub(n, block, body, i_end, diags):
    for ins in body[i_end + 1 :]:
        if (
            ins.base == "sub"
            and len(ins.operands) == 3
            and isinstance(ins.operands[0], Reg)
            and ins.operands[0].name == block.result_reg
        ):
            srcs = {
                op.name for op in ins.operands[1:] if isinstance(op, Reg)
            }
            if srcs == {block.end_clock_reg, block.start_clock_reg}:
                return
            diags.append(
                Diagnostic(
                    CODE_TIMING_NESTING,
                    f"block {n} delta subtraction reads {sorted(srcs)}, want exactly "
                    f"{{{block.end_clock_reg}, {block.start_clock_reg}}}",
                )
            )
            return
    diags.append(
        Diagnostic(
            CODE_TIMING_NESTING,
            f"block {n} has no delta subtraction into {block.result_reg}",
        )
    )


def _check_result_stored(n, block, body, diags):
    """The cycle delta must land in memory: some store's value operand is
    the block's result register."""
    for ins in body:
        if ins.base == "st" and ins.operands and ins.operands[-1] == Reg(block.result_reg):
            return
    diags.append(
        Diagnostic(
            CODE_OUTPUT_STORE,
            f"block {n} cycle delta {block.result_reg} is never stored",
        )
    )


def _check_dependence(n, body, payload, i_end, diags):
    produced: set[str] = set()
    for ins in payload:
        defs, _ = _defs_uses(ins)
        produced |= defs
    if not produced:
        return
    consumed: set[str] = set()
    for ins in body[i_end + 1 :]:
        _, uses = _defs_uses(ins)
        consumed |= uses
    dead = produced - consumed
    if dead:
        diags.append(
            Diagnostic(
                CODE_DEAD_RESULT,
                f"block {n} timed result {sorted(dead)} is never consumed; "
                "the dependent dummy operation is missing or detached",
            )
        )
