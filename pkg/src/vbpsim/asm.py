"""Two-pass text assembler for VB-ISA.

Source format: one statement per line, ``;`` starts a comment.  A line
may carry a ``label:`` prefix, then an instruction or a directive:

    org <addr>        set the emission address (starts a new segment)
    db  <b0> [b1 ..]  emit raw bytes (comma or space separated)
    dq  <v0> [v1 ..]  emit 64-bit little-endian words (labels allowed)

Registers are written ``R0``..``R7``; memory operands as ``[R2+0x10]``,
``[R2-4]`` or ``[R2]``.  Branch targets and MOVI immediates may be labels,
resolved in the second pass; relative offsets are computed from the end
of the referencing instruction.  The entry point is the ``start`` label
when defined, otherwise the lowest emitted address.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .isa import Instruction, Op, encode

__all__ = [
    "assemble", "Program", "Segment",
    "AsmError", "AsmSyntaxError", "DuplicateLabelError", "UnresolvedLabelError",
]

M32 = 0xFFFF_FFFF
M64 = 0xFFFF_FFFF_FFFF_FFFF


class AsmError(Exception):
    """Assembly failure; carries the 1-based source line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class AsmSyntaxError(AsmError):
    pass


class DuplicateLabelError(AsmError):
    pass


class UnresolvedLabelError(AsmError):
    pass


@dataclass(frozen=True)
class Segment:
    base: int
    data: bytes

    @property
    def end(self) -> int:
        return self.base + len(self.data)


@dataclass
class Program:
    segments: list[Segment]
    symbols: dict[str, int]
    entry: int

    def flatten(self, fill: int = 0) -> tuple[int, bytes]:
        """(base, contiguous bytes) over the full covered address range."""
        base = min(s.base for s in self.segments)
        end = max(s.end for s in self.segments)
        buf = bytearray(bytes([fill]) * (end - base))
        for s in self.segments:
            buf[s.base - base:s.end - base] = s.data
        return base, bytes(buf)


_LABEL_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*:\s*(.*)$")
_IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_MEM_RE = re.compile(r"^\[\s*[Rr]([0-9]+)\s*(?:([+-])\s*([^\]\s]+)\s*)?\]$")
_REG_RE = re.compile(r"^[Rr]([0-9]+)$")

_TWO_REG_OPS = {"MOVR": Op.MOVR, "ADD": Op.ADD, "SUB": Op.SUB, "XOR": Op.XOR, "CMP": Op.CMP}
_BRANCH_OPS = {"JZ": Op.JZ, "JNZ": Op.JNZ, "JMP": Op.JMP}
_BARE_OPS = {"HALT": Op.HALT, "NOP": Op.NOP, "INT3": Op.INT3}


def _parse_int(tok: str) -> int | None:
    tok = tok.strip()
    neg = tok.startswith("-")
    if neg:
        tok = tok[1:]
    try:
        val = int(tok, 0)
    except ValueError:
        return None
    return -val if neg else val


def _split_operands(rest: str) -> list[str]:
    return [p.strip() for p in rest.split(",")] if rest.strip() else []


@dataclass
class _Stmt:
    line: int
    addr: int
    kind: str                 # "instr" | "db" | "dq"
    mnemonic: str = ""
    operands: list[str] = field(default_factory=list)
    size: int = 0
    raw: bytes = b""
    dq_vals: list[str] = field(default_factory=list)


def _stmt_size(line: int, mnemonic: str, operands: list[str]) -> int:
    m = mnemonic.upper()
    if m in _BARE_OPS:
        return 1
    if m in _TWO_REG_OPS or m in ("RDDR", "OUT", "RDTSC"):
        return 2
    if m in _BRANCH_OPS:
        return 5
    if m in ("LOAD8", "LOAD64", "STORE8", "STORE64"):
        return 6
    if m == "MOVI":
        return 10
    raise AsmSyntaxError(line, f"unknown mnemonic {mnemonic!r}")


def _parse_reg(line: int, tok: str) -> int:
    m = _REG_RE.match(tok)
    if not m:
        raise AsmSyntaxError(line, f"expected register, got {tok!r}")
    n = int(m.group(1))
    if n > 7:
        raise AsmSyntaxError(line, f"register R{n} out of range")
    return n


def _parse_mem(line: int, tok: str) -> tuple[int, int]:
    m = _MEM_RE.match(tok)
    if not m:
        raise AsmSyntaxError(line, f"expected memory operand, got {tok!r}")
    reg = int(m.group(1))
    if reg > 7:
        raise AsmSyntaxError(line, f"register R{reg} out of range")
    disp = 0
    if m.group(2):
        v = _parse_int(m.group(3))
        if v is None:
            raise AsmSyntaxError(line, f"bad displacement in {tok!r}")
        disp = -v if m.group(2) == "-" else v
    if not -(1 << 31) <= disp < (1 << 31):
        raise AsmSyntaxError(line, f"displacement {disp:#x} out of range")
    return reg, disp


def _resolve_value(line: int, tok: str, symbols: dict[str, int]) -> int:
    val = _parse_int(tok)
    if val is not None:
        return val
    if _IDENT_RE.match(tok) and tok in symbols:
        return symbols[tok]
    raise UnresolvedLabelError(line, f"unresolved label {tok!r}")


def _encode_stmt(st: _Stmt, symbols: dict[str, int]) -> bytes:
    line = st.line
    m = st.mnemonic.upper()
    ops = st.operands
    def need(n: int) -> None:
        if len(ops) != n:
            raise AsmSyntaxError(line, f"{m} takes {n} operand(s), got {len(ops)}")
    if m in _BARE_OPS:
        need(0)
        return encode(Instruction(_BARE_OPS[m]))
    if m in _TWO_REG_OPS:
        need(2)
        return encode(Instruction(_TWO_REG_OPS[m], rd=_parse_reg(line, ops[0]), rs=_parse_reg(line, ops[1])))
    if m == "MOVI":
        need(2)
        rd = _parse_reg(line, ops[0])
        imm = _resolve_value(line, ops[1], symbols) & M64
        return encode(Instruction(Op.MOVI, rd=rd, imm=imm))
    if m in ("LOAD8", "LOAD64"):
        need(2)
        rd = _parse_reg(line, ops[0])
        rs, disp = _parse_mem(line, ops[1])
        return encode(Instruction(Op[m], rd=rd, rs=rs, disp=disp))
    if m in ("STORE8", "STORE64"):
        need(2)
        rd, disp = _parse_mem(line, ops[0])
        rs = _parse_reg(line, ops[1])
        return encode(Instruction(Op[m], rd=rd, rs=rs, disp=disp))
    if m in _BRANCH_OPS:
        need(1)
        target = _resolve_value(line, ops[0], symbols) & M32
        rel = (target - (st.addr + 5)) & M32
        if rel >= 1 << 31:
            rel -= 1 << 32
        return encode(Instruction(_BRANCH_OPS[m], disp=rel))
    if m == "RDDR":
        need(2)
        rd = _parse_reg(line, ops[0])
        slot = _parse_int(ops[1])
        if slot is None or not 0 <= slot <= 7:
            raise AsmSyntaxError(line, f"bad slot {ops[1]!r}")
        return encode(Instruction(Op.RDDR, rd=rd, rs=slot))
    if m == "OUT":
        need(1)
        return encode(Instruction(Op.OUT, rs=_parse_reg(line, ops[0])))
    if m == "RDTSC":
        need(1)
        return encode(Instruction(Op.RDTSC, rd=_parse_reg(line, ops[0])))
    raise AsmSyntaxError(line, f"unknown mnemonic {st.mnemonic!r}")


def assemble(source: str) -> Program:
    """Assemble ``source``, returning segments, a symbol table and the entry."""
    symbols: dict[str, int] = {}
    stmts: list[_Stmt] = []
    seg_starts: list[int] = []
    cur_base: int | None = None
    addr = 0

    def begin_segment(base: int) -> None:
        nonlocal cur_base, addr
        cur_base = base
        addr = base
        seg_starts.append(base)

    # Pass 1: sizes and label addresses.
    for lineno, rawline in enumerate(source.splitlines(), start=1):
        text = rawline.split(";", 1)[0].strip()
        while True:
            m = _LABEL_RE.match(text)
            if not m:
                break
            name, text = m.group(1), m.group(2).strip()
            if name in symbols:
                raise DuplicateLabelError(lineno, f"duplicate label {name!r}")
            if cur_base is None:
                begin_segment(0)
            symbols[name] = addr
        if not text:
            continue
        parts = text.split(None, 1)
        word = parts[0]
        rest = parts[1] if len(parts) > 1 else ""
        lw = word.lower()
        if lw == "org":
            base = _parse_int(rest)
            if base is None or not 0 <= base <= M32:
                raise AsmSyntaxError(lineno, f"bad org address {rest!r}")
            begin_segment(base)
            continue
        if cur_base is None:
            begin_segment(0)
        if lw == "db":
            toks = rest.replace(",", " ").split()
            if not toks:
                raise AsmSyntaxError(lineno, "db needs at least one byte")
            stmts.append(_Stmt(lineno, addr, "db", raw=b"", operands=toks, size=len(toks)))
            addr += len(toks)
        elif lw == "dq":
            toks = rest.replace(",", " ").split()
            if not toks:
                raise AsmSyntaxError(lineno, "dq needs at least one value")
            stmts.append(_Stmt(lineno, addr, "dq", dq_vals=toks, size=8 * len(toks)))
            addr += 8 * len(toks)
        else:
            size = _stmt_size(lineno, word, _split_operands(rest))
            stmts.append(_Stmt(lineno, addr, "instr", mnemonic=word,
                               operands=_split_operands(rest), size=size))
            addr += size
        if addr > M32 + 1:
            raise AsmSyntaxError(lineno, "address overflow")

    # Pass 2: emit with all labels known.
    chunks: dict[int, bytearray] = {}
    order: list[int] = []
    cur: bytearray | None = None
    cur_start = 0
    for st in stmts:
        if cur is None or st.addr != cur_start + len(cur):
            cur = bytearray()
            cur_start = st.addr
            chunks[cur_start] = cur
            order.append(cur_start)
        if st.kind == "db":
            for tok in st.operands:
                v = _parse_int(tok)
                if v is None or not 0 <= v <= 0xFF:
                    raise AsmSyntaxError(st.line, f"bad byte value {tok!r}")
                cur.append(v)
        elif st.kind == "dq":
            for tok in st.dq_vals:
                v = _resolve_value(st.line, tok, symbols) & M64
                cur += v.to_bytes(8, "little")
        else:
            cur += _encode_stmt(st, symbols)

    segments = [Segment(base, bytes(chunks[base])) for base in order if chunks[base]]
    if not segments:
        raise AsmSyntaxError(0, "no entry point: program emits no bytes")
    for i, a in enumerate(segments):
        for b in segments[i + 1:]:
            if a.base < b.end and b.base < a.end:
                raise AsmSyntaxError(0, f"segments at {a.base:#x} and {b.base:#x} overlap")
    entry = symbols.get("start", min(s.base for s in segments))
    return Program(segments=segments, symbols=symbols, entry=entry)
