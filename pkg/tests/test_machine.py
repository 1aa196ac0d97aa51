"""Step ordering, zero-side-effect aborts, resume tokens, taint rules."""

import random

import pytest

from vbpsim.debugger import TrapMode
from vbpsim.machine import EventKind, MachineHaltedError
from vbpsim.mmu import AccessKind, BP_FETCH, BP_R, BP_TAINT, BP_W, BP_X

from conftest import make_recipe

BASIC = """
org 0x1000
start:
    NOP
    NOP
    HALT
"""

STORE_SPAN = """
org 0x1000
start:
    MOVI R1, 0x2FFC
    MOVI R2, 0x1122334455667788
    STORE64 [R1+0], R2
    HALT
org 0x2000
pad: dq 0
org 0x3000
pad2: dq 0
"""


def test_execute_hit_leaves_pc_and_state_untouched():
    recipe = make_recipe(BASIC, script=(("vbp", 0x1000, BP_X),))
    session = recipe.build()
    ev = session.run_until_event(100)
    assert ev.kind == EventKind.VBP_HIT
    assert ev.vaddr == 0x1000 and ev.access == AccessKind.EXECUTE
    assert session.machine.pc == 0x1000
    assert session.machine.cycle == 0
    assert session.counters.instructions_retired == 0


def test_single_step_after_retirement():
    recipe = make_recipe(BASIC, mode=TrapMode.SINGLESTEP)
    session = recipe.build()
    ev = session.run_until_event(100)
    assert ev.kind == EventKind.SINGLE_STEP
    assert session.machine.pc == 0x1001


def test_store_spanning_pages_aborts_atomically():
    # W flag on a byte of the second page: nothing may be written anywhere.
    recipe = make_recipe(STORE_SPAN, script=(("vbp", 0x3000, BP_W),))
    session = recipe.build()
    ev = session.run_until_event(100)
    while ev.kind == EventKind.VBP_HIT and ev.access == AccessKind.EXECUTE:
        ev = session.continue_run(100)
    assert ev.kind == EventKind.VBP_HIT
    assert ev.vaddr == 0x3000 and ev.access == AccessKind.WRITE
    assert session.kernel.debug_read(0x2FFC, 8) == bytes(8)  # both pages unwritten
    # after resume the full write lands
    session.continue_run(100)
    assert session.kernel.debug_read(0x2FFC, 8) == bytes.fromhex("8877665544332211")


def test_resume_is_one_shot_across_executions():
    source = """
org 0x1000
start:
    MOVI R2, 2
    MOVI R5, 1
loop:
    NOP
    SUB R2, R5
    CMP R2, R6
    JNZ loop
    HALT
"""
    recipe = make_recipe(source, script=(("vbp", 0x1014, BP_X),))  # the NOP
    session = recipe.build()
    status, _ = session.run_to_completion(1000)
    hits = [e for e in session.event_log if e.kind == EventKind.VBP_HIT]
    assert status == "halt"
    assert len(hits) == 2  # loop executes the NOP twice; one resume each


def test_resume_token_does_not_cover_other_kinds():
    source = """
org 0x1000
start:
    MOVI R1, 0x2000
    STORE8 [R1+0], R2
    HALT
org 0x2000
buf: dq 0
"""
    store_addr = 0x1000 + 10
    recipe = make_recipe(source, script=(
        ("vbp", store_addr, BP_X), ("vbp", 0x2000, BP_W)))
    session = recipe.build()
    first = session.run_until_event(100)
    assert (first.vaddr, first.access) == (store_addr, AccessKind.EXECUTE)
    second = session.continue_run(100)
    assert (second.vaddr, second.access) == (0x2000, AccessKind.WRITE)
    status, _ = session.run_to_completion(100)
    assert status == "halt"


def test_suppressions_accumulate_within_one_instruction():
    # five FETCH flags on one 10-byte MOVI: five hits, each exactly once
    source = "org 0x1000\nstart: MOVI R1, 0x42\nHALT\n"
    script = tuple(("vbp", 0x1000 + i, BP_FETCH) for i in range(5))
    session = make_recipe(source, script=script).build()
    status, _ = session.run_to_completion(100)
    hits = [e for e in session.event_log if e.kind == EventKind.VBP_HIT]
    assert status == "halt"
    assert [e.vaddr for e in hits] == [0x1000 + i for i in range(5)]
    assert session.machine.regs[1] == 0x42


def test_read_watch_does_not_fire_on_fetch():
    # R flag on an instruction byte: executing it is not a read
    source = "org 0x1000\nstart: NOP\nHALT\n"
    session = make_recipe(source, script=(("vbp", 0x1000, BP_R),)).build()
    status, _ = session.run_to_completion(100)
    assert status == "halt"
    assert not [e for e in session.event_log if e.kind == EventKind.VBP_HIT]


def test_invalid_opcode_surfaces_as_event():
    source = "org 0x1000\nstart: db 0xFE\nHALT\n"
    session = make_recipe(source).build()
    ev = session.run_until_event(100)
    assert ev.kind == EventKind.INVALID_OPCODE
    assert session.machine.pc == 0x1000


def test_halt_only_guest_under_singlestep():
    source = "org 0x1000\nstart: HALT\n"
    session = make_recipe(source, mode=TrapMode.SINGLESTEP).build()
    session.run_to_completion(100)
    kinds = [e.kind for e in session.event_log]
    assert kinds == [EventKind.SINGLE_STEP, EventKind.HALT]
    with pytest.raises(MachineHaltedError):
        session.machine.step()


def test_rdtsc_is_deterministic_cycle_count():
    source = "org 0x1000\nstart: RDTSC R1\nNOP\nRDTSC R2\nHALT\n"
    a = make_recipe(source).build()
    a.run_to_completion(100)
    b = make_recipe(source).build()
    b.run_to_completion(100)
    assert a.machine.regs[1] == b.machine.regs[1]
    assert a.machine.regs[2] - a.machine.regs[1] == 2


# -- taint propagation ----------------------------------------------------------

TAINT_SRC = """
org 0x1000
start:
    MOVI R1, 0x2000
    LOAD64 R2, [R1+0]
    MOVR R3, R2
    ADD R4, R3
    MOVI R2, 0
    STORE64 [R1+16], R4
    HALT
org 0x2000
src: dq 0
     dq 0
     dq 0
"""


def _taint_session():
    recipe = make_recipe(TAINT_SRC, taint=True,
                         script=(("attach", 0x2000), ("inject", 0x2003, (0xAB,))))
    return recipe.build()


def test_load_or_of_source_bytes_and_movr_alu_copy():
    session = _taint_session()
    status, _ = session.run_to_completion(100)
    assert status == "halt"
    m = session.machine
    assert not m.reg_taint[2]     # MOVI cleared it afterwards
    assert m.reg_taint[3]         # MOVR copied the load taint
    assert m.reg_taint[4]         # ALU ORed it in
    for i in range(8):            # STORE64 assigned taint to all 8 bytes
        assert session.kernel.read_vbp(0x2010 + i) & BP_TAINT


def test_untainted_store_clears_taint_bits():
    source = """
org 0x1000
start:
    MOVI R1, 0x2000
    MOVI R2, 7
    STORE64 [R1+0], R2
    HALT
org 0x2000
buf: dq 0
"""
    recipe = make_recipe(source, taint=True,
                         script=(("attach", 0x2000), ("inject", 0x2000, tuple(range(8)))))
    session = recipe.build()
    session.run_to_completion(100)
    for i in range(8):
        assert not session.kernel.read_vbp(0x2000 + i) & BP_TAINT


def test_taint_store_to_unbacked_page_drops_and_counts():
    source = """
org 0x1000
start:
    MOVI R1, 0x2000
    LOAD8 R2, [R1+0]
    MOVI R3, 0x3000
    STORE8 [R3+0], R2
    HALT
org 0x2000
src: dq 0
org 0x3000
dst: dq 0
"""
    recipe = make_recipe(source, taint=True,
                         script=(("attach", 0x2000), ("inject", 0x2000, (0x5A,))))
    session = recipe.build()
    status, _ = session.run_to_completion(100)
    assert status == "halt"
    assert session.counters.taint_dropped == 1
    assert session.kernel.debug_read(0x3000, 1) == b"\x5a"  # data still moved


# -- abort atomicity and transparency properties -----------------------------------


def _random_guest(rng: random.Random) -> str:
    lines = ["org 0x1000", "start:", "MOVI R6, 0x2000", "MOVI R7, 3"]
    for _ in range(rng.randrange(4, 12)):
        choice = rng.random()
        if choice < 0.3:
            lines.append(f"MOVI R{rng.randrange(6)}, {rng.randrange(256)}")
        elif choice < 0.5:
            lines.append(f"STORE64 [R6+{rng.randrange(0, 64) * 8}], R{rng.randrange(6)}")
        elif choice < 0.7:
            lines.append(f"LOAD64 R{rng.randrange(6)}, [R6+{rng.randrange(0, 64) * 8}]")
        elif choice < 0.9:
            op = rng.choice(["ADD", "SUB", "XOR", "CMP"])
            lines.append(f"{op} R{rng.randrange(6)}, R{rng.randrange(6)}")
        else:
            lines.append(f"OUT R{rng.randrange(6)}")
    lines += ["HALT", "org 0x2000", "buf: dq 0"]
    return "\n".join(lines) + "\n"


def test_abort_atomicity_property():
    rng = random.Random(1234)
    for _ in range(40):
        source = _random_guest(rng)
        flags = rng.choice((BP_X, BP_W, BP_R, BP_FETCH))
        if flags in (BP_X, BP_FETCH):
            vaddr = 0x1000 + rng.randrange(0, 80)
        else:
            vaddr = 0x2000 + rng.randrange(0, 512)
        session = make_recipe(source, script=(("vbp", vaddr, flags),),
                              phys_size=1024 * 1024).build()
        machine = session.machine
        for _ in range(200):
            if machine.halted:
                break
            snap = machine.snapshot()
            mem = session.kernel.mmu.phys.dump()
            result = machine.step()
            if not result.retired:
                blocking = [e for e in result.events
                            if e.kind != EventKind.HOOK_POINT]
                assert blocking, "abort must surface an event"
                assert machine.snapshot() == snap
                assert session.kernel.mmu.phys.dump() == mem
                ev = blocking[0]
                if ev.kind == EventKind.VBP_HIT:
                    machine.resume(ev.vaddr, ev.access)
                else:
                    break


def test_trace_transparency_under_resumed_breakpoints():
    rng = random.Random(99)
    for _ in range(15):
        source = _random_guest(rng)
        clean = make_recipe(source, trace=True).build()
        assert clean.run_to_completion(2000)[0] == "halt"
        offsets = rng.sample(range(0, 60), 5)
        script = tuple(("vbp", 0x1000 + off, rng.choice((BP_X, BP_FETCH)))
                       for off in offsets)
        instrumented = make_recipe(source, script=script, trace=True).build()
        assert instrumented.run_to_completion(5000)[0] == "halt"
        clean_trace = [(pc, regs) for pc, _op, _rd, _rs, _ea, regs in clean.machine.trace]
        instr_trace = [(pc, regs) for pc, _op, _rd, _rs, _ea, regs
                       in instrumented.machine.trace]
        assert clean_trace == instr_trace
        assert clean.machine.out_bytes == instrumented.machine.out_bytes
