"""Decoder/encoder contract: totality, round trips, and the jump arithmetic
that makes byte position meaningful."""

import pytest
from hypothesis import given, strategies as st

from vbpsim.isa import (
    LENGTH_BY_BYTE, Instruction, Op, OperandOutOfRange, TruncatedInstruction,
    decode, encode,
)

VALID_LENGTHS = {1, 2, 5, 6, 10}


def test_jmp_rel32_forward():
    instr = decode(bytes.fromhex("e905000000"))
    assert instr.op is Op.JMP
    assert instr.disp == 5
    assert instr.length == 5
    assert instr.branch_target(0x1000) == 0x100A


def test_jmp_with_trap_byte_in_displacement():
    # Independent oracle: the displacement field is plain little-endian
    # arithmetic, so a 0xCC at offset 2 must contribute 0xCC00.
    raw = bytes.fromhex("e910cc0000")
    expected_disp = int.from_bytes(raw[1:5], "little", signed=True)
    assert expected_disp == 0x0000CC10
    expected_target = (0x1000 + 5 + expected_disp) & 0xFFFFFFFF
    assert expected_target == 0xDC15

    instr = decode(raw)
    assert instr.op is Op.JMP
    assert instr.disp == expected_disp
    assert instr.branch_target(0x1000) == expected_target


def test_int3_single_byte():
    instr = decode(b"\xcc")
    assert instr.op is Op.INT3
    assert instr.length == 1


def test_halt_encoding():
    assert encode(Instruction(Op.HALT)) == b"\x00"


def test_movi_encoding():
    raw = encode(Instruction(Op.MOVI, rd=1, imm=0x2A))
    assert raw == bytes.fromhex("10012a00000000000000")
    assert len(raw) == 10


def test_store8_encoding_packs_dest_high_source_low():
    raw = encode(Instruction(Op.STORE8, rd=2, rs=3, disp=0x10))
    assert raw == bytes.fromhex("282310000000")


def test_length_table_total_over_all_bytes():
    for byte0 in range(256):
        length = LENGTH_BY_BYTE[byte0]
        assert length in VALID_LENGTHS
        instr = decode(bytes([byte0]) + bytes(9))
        if instr.valid:
            assert instr.length == length
        else:
            assert instr.length == 1


def test_reserved_register_nibbles_decode_invalid():
    assert not decode(bytes.fromhex("1108")).valid   # rs nibble 8
    assert not decode(bytes.fromhex("1181")).valid   # rd nibble 8
    assert not decode(bytes.fromhex("10ff") + bytes(8)).valid
    assert not decode(bytes.fromhex("f109")).valid


def test_truncated_is_distinct_from_invalid():
    with pytest.raises(TruncatedInstruction):
        decode(b"\xe9\x01")
    with pytest.raises(TruncatedInstruction):
        decode(b"")
    invalid = decode(b"\xff")
    assert not invalid.valid  # reserved byte decodes, never raises


def test_decode_never_reads_past_declared_length():
    base = bytes.fromhex("e905000000")
    with_junk = base + b"\xde\xad\xbe\xef"
    assert decode(base) == decode(with_junk)


def test_encode_rejects_out_of_range_operands():
    with pytest.raises(OperandOutOfRange):
        encode(Instruction(Op.MOVR, rd=8, rs=0))
    with pytest.raises(OperandOutOfRange):
        encode(Instruction(Op.MOVI, rd=0, imm=1 << 64))
    with pytest.raises(OperandOutOfRange):
        encode(Instruction(Op.JMP, disp=1 << 31))


_reg = st.integers(0, 7)
_imm64 = st.integers(0, (1 << 64) - 1)
_disp32 = st.integers(-(1 << 31), (1 << 31) - 1)


def _instruction_strategy():
    bare = st.sampled_from([Op.HALT, Op.NOP, Op.INT3]).map(Instruction)
    single = st.builds(Instruction, op=st.sampled_from([Op.OUT]), rs=_reg)
    single_rd = st.builds(Instruction, op=st.sampled_from([Op.RDTSC]), rd=_reg)
    packed = st.builds(Instruction,
                       op=st.sampled_from([Op.MOVR, Op.ADD, Op.SUB, Op.XOR, Op.CMP, Op.RDDR]),
                       rd=_reg, rs=_reg)
    movi = st.builds(Instruction, op=st.just(Op.MOVI), rd=_reg, imm=_imm64)
    mem = st.builds(Instruction,
                    op=st.sampled_from([Op.LOAD8, Op.LOAD64, Op.STORE8, Op.STORE64]),
                    rd=_reg, rs=_reg, disp=_disp32)
    rel = st.builds(Instruction, op=st.sampled_from([Op.JZ, Op.JNZ, Op.JMP]), disp=_disp32)
    return st.one_of(bare, single, single_rd, packed, movi, mem, rel)


@given(_instruction_strategy())
def test_roundtrip_encode_decode_encode(instr):
    raw = encode(instr)
    assert len(raw) == instr.length
    decoded = decode(raw)
    assert decoded == instr
    assert encode(decoded) == raw


@given(st.binary(min_size=10, max_size=10))
def test_decode_total_on_arbitrary_bytes(raw):
    instr = decode(raw)
    assert instr.length <= 10
    if instr.valid:
        # canonical re-encoding only touches the declared fields
        assert decode(encode(instr)) == instr
