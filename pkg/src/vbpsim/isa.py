"""VB-ISA: variable-length instruction encodings, decoder, and encoder.

A deliberately small ISA with x86-flavored traits: a single-byte trap
opcode 0xCC, 0xE9-style relative jumps measured from the end of the
instruction, and mixed instruction lengths so that the byte position
inside an instruction carries meaning.

Encoding summary (all multi-byte fields little-endian):

    opcode  mnemonic             length  layout
    0x00    HALT                 1       op
    0x01    NOP                  1       op
    0x10    MOVI   rd, imm64     10      op reg imm64
    0x11    MOVR   rd, rs        2       op packed
    0x20    LOAD8  rd, [rs+d]    6       op packed disp32
    0x21    LOAD64 rd, [rs+d]    6       op packed disp32
    0x28    STORE8  [rd+d], rs   6       op packed disp32
    0x29    STORE64 [rd+d], rs   6       op packed disp32
    0x30    ADD    rd, rs        2       op packed
    0x31    SUB    rd, rs        2       op packed
    0x32    XOR    rd, rs        2       op packed
    0x33    CMP    rd, rs        2       op packed    (sets ZF)
    0x74    JZ     rel32         5       op rel32
    0x75    JNZ    rel32         5       op rel32
    0xE9    JMP    rel32         5       op rel32
    0xCC    INT3                 1       op
    0xD0    RDDR   rd, slot      2       op packed
    0xF1    OUT    rs            2       op reg
    0xF2    RDTSC  rd            2       op reg

"packed" puts the destination register in the high nibble and the source
register (or debug-register slot) in the low nibble.  "reg" is a plain
register-index byte.  Relative branch displacements are measured from the
end of the branch instruction.  Register nibbles or register bytes with
values above 7 are reserved and decode to the INVALID marker.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

__all__ = [
    "Op", "Instruction", "decode", "encode",
    "TruncatedInstruction", "OperandOutOfRange",
    "LENGTH_BY_BYTE", "OP_LENGTH", "MNEMONICS",
]

M32 = 0xFFFF_FFFF
M64 = 0xFFFF_FFFF_FFFF_FFFF


class Op(IntEnum):
    """Opcode byte values; INVALID marks reserved encodings."""

    HALT = 0x00
    NOP = 0x01
    MOVI = 0x10
    MOVR = 0x11
    LOAD8 = 0x20
    LOAD64 = 0x21
    STORE8 = 0x28
    STORE64 = 0x29
    ADD = 0x30
    SUB = 0x31
    XOR = 0x32
    CMP = 0x33
    JZ = 0x74
    JNZ = 0x75
    JMP = 0xE9
    INT3 = 0xCC
    RDDR = 0xD0
    OUT = 0xF1
    RDTSC = 0xF2
    INVALID = -1


# Operand layout families.
_F_NONE = 0    # opcode only
_F_REG = 1     # plain register byte
_F_PACKED = 2  # rd<<4 | rs
_F_REGIMM = 3  # plain register byte + imm64
_F_MEM = 4     # packed + signed disp32
_F_REL = 5     # signed rel32

OP_FORMAT: dict[Op, int] = {
    Op.HALT: _F_NONE,
    Op.NOP: _F_NONE,
    Op.INT3: _F_NONE,
    Op.OUT: _F_REG,
    Op.RDTSC: _F_REG,
    Op.MOVR: _F_PACKED,
    Op.ADD: _F_PACKED,
    Op.SUB: _F_PACKED,
    Op.XOR: _F_PACKED,
    Op.CMP: _F_PACKED,
    Op.RDDR: _F_PACKED,
    Op.MOVI: _F_REGIMM,
    Op.LOAD8: _F_MEM,
    Op.LOAD64: _F_MEM,
    Op.STORE8: _F_MEM,
    Op.STORE64: _F_MEM,
    Op.JZ: _F_REL,
    Op.JNZ: _F_REL,
    Op.JMP: _F_REL,
}

_FORMAT_LENGTH = {_F_NONE: 1, _F_REG: 2, _F_PACKED: 2, _F_REGIMM: 10, _F_MEM: 6, _F_REL: 5}

OP_LENGTH: dict[Op, int] = {op: _FORMAT_LENGTH[fmt] for op, fmt in OP_FORMAT.items()}
OP_LENGTH[Op.INVALID] = 1

# Total length table over every first byte 0x00-0xFF; reserved bytes get 1.
LENGTH_BY_BYTE: list[int] = [1] * 256
for _op, _ln in OP_LENGTH.items():
    if _op is not Op.INVALID:
        LENGTH_BY_BYTE[int(_op)] = _ln

_VALID_OPCODE_BYTES = frozenset(int(op) for op in Op if op is not Op.INVALID)

MNEMONICS: frozenset[str] = frozenset(op.name for op in Op if op is not Op.INVALID)

_MEM_OPS = (Op.LOAD8, Op.LOAD64, Op.STORE8, Op.STORE64)
_REL_OPS = (Op.JZ, Op.JNZ, Op.JMP)


class TruncatedInstruction(Exception):
    """Buffer ends before the instruction's declared length."""

    def __init__(self, opcode: int, needed: int, got: int):
        super().__init__(f"opcode {opcode:#04x} needs {needed} bytes, got {got}")
        self.needed = needed
        self.got = got


class OperandOutOfRange(Exception):
    """Operand field does not fit its encoding slot."""


@dataclass(frozen=True)
class Instruction:
    """One decoded instruction.

    ``rd``/``rs`` are register indices (``rs`` doubles as the
    debug-register slot for RDDR), ``imm`` is the 64-bit immediate,
    ``disp`` the signed 32-bit displacement or branch offset.
    For the INVALID marker, ``imm`` holds the offending byte.
    """

    op: Op
    rd: int = 0
    rs: int = 0
    imm: int = 0
    disp: int = 0

    @property
    def length(self) -> int:
        return OP_LENGTH[self.op]

    @property
    def valid(self) -> bool:
        return self.op is not Op.INVALID

    def branch_target(self, addr: int) -> int:
        """Branch destination for a rel32 instruction located at ``addr``."""
        if self.op not in _REL_OPS:
            raise ValueError(f"{self.op.name} has no branch target")
        return (addr + self.length + self.disp) & M32

    def text(self) -> str:
        """Disassembly string."""
        op = self.op
        fmt = OP_FORMAT.get(op)
        if op is Op.INVALID:
            return f"(bad {self.imm:#04x})"
        if fmt == _F_NONE:
            return op.name
        if op is Op.OUT:
            return f"OUT R{self.rs}"
        if op is Op.RDTSC:
            return f"RDTSC R{self.rd}"
        if op is Op.RDDR:
            return f"RDDR R{self.rd}, {self.rs}"
        if fmt == _F_PACKED:
            return f"{op.name} R{self.rd}, R{self.rs}"
        if op is Op.MOVI:
            return f"MOVI R{self.rd}, {self.imm:#x}"
        if op in (Op.LOAD8, Op.LOAD64):
            return f"{op.name} R{self.rd}, [R{self.rs}{self.disp:+#x}]"
        if op in (Op.STORE8, Op.STORE64):
            return f"{op.name} [R{self.rd}{self.disp:+#x}], R{self.rs}"
        return f"{op.name} {self.disp:+#x}"


def _invalid(byte: int) -> Instruction:
    return Instruction(Op.INVALID, imm=byte & 0xFF)


def decode(data: bytes | bytearray | memoryview, addr: int = 0) -> Instruction:
    """Decode one instruction from the start of ``data``.

    Decoding is total over byte values: reserved opcode bytes and reserved
    register encodings yield the INVALID marker (length 1).  Raises
    TruncatedInstruction only when ``data`` ends before the instruction's
    declared length.  ``addr`` is accepted for symmetry with disassembly
    call sites; the decoded result does not depend on it.
    """
    if len(data) == 0:
        raise TruncatedInstruction(0, 1, 0)
    byte0 = data[0]
    if byte0 not in _VALID_OPCODE_BYTES:
        return _invalid(byte0)
    op = Op(byte0)
    fmt = OP_FORMAT[op]
    length = _FORMAT_LENGTH[fmt]
    if len(data) < length:
        raise TruncatedInstruction(byte0, length, len(data))
    if fmt == _F_NONE:
        return Instruction(op)
    rb = data[1]
    if fmt == _F_REG:
        if rb > 7:
            return _invalid(byte0)
        if op is Op.OUT:
            return Instruction(op, rs=rb)
        return Instruction(op, rd=rb)
    if fmt == _F_PACKED:
        hi, lo = rb >> 4, rb & 0x0F
        if hi > 7 or lo > 7:
            return _invalid(byte0)
        return Instruction(op, rd=hi, rs=lo)
    if fmt == _F_REGIMM:
        if rb > 7:
            return _invalid(byte0)
        imm = int.from_bytes(data[2:10], "little")
        return Instruction(op, rd=rb, imm=imm)
    if fmt == _F_MEM:
        hi, lo = rb >> 4, rb & 0x0F
        if hi > 7 or lo > 7:
            return _invalid(byte0)
        disp = int.from_bytes(data[2:6], "little", signed=True)
        return Instruction(op, rd=hi, rs=lo, disp=disp)
    # _F_REL
    disp = int.from_bytes(data[1:5], "little", signed=True)
    return Instruction(op, disp=disp)


def _check_reg(value: int, what: str) -> None:
    if not 0 <= value <= 7:
        raise OperandOutOfRange(f"{what} {value} not in 0..7")


def encode(instr: Instruction) -> bytes:
    """Encode an instruction to its canonical byte sequence."""
    op = instr.op
    if op is Op.INVALID:
        raise OperandOutOfRange("cannot encode the INVALID marker")
    fmt = OP_FORMAT[op]
    head = bytes([int(op)])
    if fmt == _F_NONE:
        return head
    if fmt == _F_REG:
        reg = instr.rs if op is Op.OUT else instr.rd
        _check_reg(reg, "register")
        return head + bytes([reg])
    if fmt == _F_PACKED:
        _check_reg(instr.rd, "rd")
        _check_reg(instr.rs, "rs")
        return head + bytes([(instr.rd << 4) | instr.rs])
    if fmt == _F_REGIMM:
        _check_reg(instr.rd, "rd")
        if not 0 <= instr.imm <= M64:
            raise OperandOutOfRange(f"imm64 {instr.imm:#x} out of range")
        return head + bytes([instr.rd]) + instr.imm.to_bytes(8, "little")
    if fmt == _F_MEM:
        _check_reg(instr.rd, "rd")
        _check_reg(instr.rs, "rs")
        if not -(1 << 31) <= instr.disp < (1 << 31):
            raise OperandOutOfRange(f"disp32 {instr.disp:#x} out of range")
        return head + bytes([(instr.rd << 4) | instr.rs]) + instr.disp.to_bytes(4, "little", signed=True)
    # _F_REL
    if not -(1 << 31) <= instr.disp < (1 << 31):
        raise OperandOutOfRange(f"rel32 {instr.disp:#x} out of range")
    return head + instr.disp.to_bytes(4, "little", signed=True)
