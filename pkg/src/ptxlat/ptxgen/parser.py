"""Parser for the PTX subset produced by the generator.

Line oriented; reconstructs the same AST that codegen builds so that
``parse(render(m)) == m`` holds structurally. Anything outside the subset
becomes a ParseDiagnostic rather than an exception: the validator folds
these into its report.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

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
)

#: Instruction bases the parser (and validator) accept.
KNOWN_OPCODES = frozenset(
    """
    ld st mov add sub mul mad div rem abs min max and or not xor cnot shl shr
    fma rcp sqrt rsqrt sin cos lg2 ex2 copysign popc clz bfe bfi bfind brev
    sad mul24 mad24 addc subc madc tex bar membar ret
    """.split()
)

_RE_REG = re.compile(r"^%[a-zA-Z_][a-zA-Z0-9_.]*$")
_RE_IMM = re.compile(r"^(?:[-+]?\d+|0[xX][0-9a-fA-F]+|0[fF][0-9a-fA-F]{8}|0[dD][0-9a-fA-F]{16})$")
_RE_MEMREF = re.compile(r"^\[\s*([%$\w.]+)\s*(?:\+\s*(\d+))?\s*\]$")
_RE_REGDECL = re.compile(r"^\.reg\s+(\.\w+)\s+(%[a-zA-Z_]+)<(\d+)>;$")
_RE_SPACEVAR = re.compile(r"^(\.const|\.shared)\s+\.align\s+(\d+)\s+(\.\w+)\s+(\w+)\[(\d+)\];$")
_RE_PARAM = re.compile(r"^\.param\s+(\.\w+)\s+([\w$]+),?$")
_RE_ENTRY = re.compile(r"^\.visible\s+\.entry\s+([\w$]+)\s*\($")
_RE_TEXSRC = re.compile(r"^\[\s*(%\w+)\s*,\s*\{([^}]*)\}\s*\]$")


@dataclass(frozen=True)
class ParseDiagnostic:
    line_no: int
    message: str

    def __str__(self):
        return f"line {self.line_no}: {self.message}"


@dataclass
class ParseResult:
    module: Optional[ModuleAst]
    diagnostics: list[ParseDiagnostic]

    @property
    def ok(self) -> bool:
        return self.module is not None and not self.diagnostics


def _split_operands(text: str) -> list[str]:
    """Split on commas not nested in brackets or braces."""
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch in "[{":
            depth += 1
        elif ch in "]}":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    tail = "".join(cur).strip()
    if tail:
        parts.append(tail)
    return parts


def _parse_operand(text: str):
    if _RE_REG.match(text):
        return Reg(text)
    if _RE_IMM.match(text):
        return Imm(text)
    m = _RE_MEMREF.match(text)
    if m:
        return MemRef(m.group(1), int(m.group(2) or 0))
    if text.startswith("{") and text.endswith("}"):
        elems = [e.strip() for e in text[1:-1].split(",")]
        if all(_RE_REG.match(e) for e in elems):
            return VecReg(tuple(Reg(e) for e in elems))
        return None
    m = _RE_TEXSRC.match(text)
    if m:
        coords = [c.strip() for c in m.group(2).split(",")]
        if _RE_REG.match(m.group(1)) and all(_RE_REG.match(c) for c in coords):
            return TexRef(Reg(m.group(1)), tuple(Reg(c) for c in coords))
    return None


def _parse_instr(line: str, line_no: int, diags: list[ParseDiagnostic]) -> Optional[Instr]:
    if not line.endswith(";"):
        diags.append(ParseDiagnostic(line_no, f"missing ';' in {line!r}"))
        return None
    line = line[:-1].strip()
    if not line:
        diags.append(ParseDiagnostic(line_no, "empty statement"))
        return None
    bits = line.split(None, 1)
    opcode = bits[0]
    base = opcode.split(".", 1)[0]
    if base not in KNOWN_OPCODES:
        diags.append(ParseDiagnostic(line_no, f"unknown opcode {opcode!r}"))
        return None
    operands: list = []
    if len(bits) == 2:
        for text in _split_operands(bits[1]):
            op = _parse_operand(text)
            if op is None:
                diags.append(ParseDiagnostic(line_no, f"unparseable operand {text!r}"))
                return None
            operands.append(op)
    return Instr(opcode, tuple(operands))


def parse(text: str) -> ParseResult:
    diags: list[ParseDiagnostic] = []
    version = target = None
    address_size = None
    const_vars: list[SpaceVar] = []
    kernel: Optional[KernelAst] = None
    state = "header"  # header -> params -> body -> done

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("//", 1)[0].strip()
        if not line:
            continue

        if state == "header":
            if line.startswith(".version"):
                version = line.split(None, 1)[1]
                continue
            if line.startswith(".target"):
                target = line.split(None, 1)[1]
                continue
            if line.startswith(".address_size"):
                address_size = int(line.split(None, 1)[1])
                continue
            m = _RE_SPACEVAR.match(line)
            if m:
                const_vars.append(
                    SpaceVar(m.group(1), int(m.group(2)), m.group(3), m.group(4), int(m.group(5)))
                )
                continue
            m = _RE_ENTRY.match(line)
            if m:
                kernel = KernelAst(name=m.group(1))
                state = "params"
                continue
            diags.append(ParseDiagnostic(line_no, f"unexpected line {line!r}"))
            continue

        if state == "params":
            if line == ")":
                continue
            if line == "{" or line == "){":
                state = "body"
                continue
            m = _RE_PARAM.match(line)
            if m:
                kernel.params.append(KernelParam(name=m.group(2), ptx_type=m.group(1)))
                continue
            diags.append(ParseDiagnostic(line_no, f"bad parameter line {line!r}"))
            continue

        if state == "body":
            if line == "}":
                state = "done"
                continue
            m = _RE_REGDECL.match(line)
            if m:
                kernel.reg_decls.append(RegDecl(m.group(1), m.group(2), int(m.group(3))))
                continue
            m = _RE_SPACEVAR.match(line)
            if m:
                kernel.space_vars.append(
                    SpaceVar(m.group(1), int(m.group(2)), m.group(3), m.group(4), int(m.group(5)))
                )
                continue
            ins = _parse_instr(line, line_no, diags)
            if ins is not None:
                kernel.body.append(ins)
            continue

        diags.append(ParseDiagnostic(line_no, f"trailing content {line!r}"))

    if version is None or target is None or address_size is None:
        diags.append(ParseDiagnostic(0, "missing .version/.target/.address_size header"))
    if kernel is None:
        diags.append(ParseDiagnostic(0, "no kernel entry found"))
        return ParseResult(None, diags)
    if state != "done":
        diags.append(ParseDiagnostic(0, "kernel body not closed"))

    module = ModuleAst(
        version=version or "",
        target=target or "",
        address_size=address_size or 0,
        const_vars=const_vars,
        kernel=kernel,
    )
    return ParseResult(module, diags)
