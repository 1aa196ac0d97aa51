"""Session control, hooks, taint injection, the oracle cross-check."""

import pytest

from vbpsim.debugger import Timeout, TrapMode
from vbpsim.kernel import NoBuddyFrame
from vbpsim.machine import EventKind
from vbpsim.mmu import BP_TAINT, BP_X, PageFault

from conftest import make_recipe

COUNTDOWN = """
org 0x1000
start:
    MOVI R2, 4
    MOVI R5, 1
loop:
    NOP
    SUB R2, R5
    CMP R2, R6
    JNZ loop
    OUT R2
    HALT
"""

FOREVER = """
org 0x1000
start:
    NOP
loop: JMP loop
"""


def test_event_at_entry_before_anything_retires():
    session = make_recipe(COUNTDOWN, script=(("vbp", 0x1000, BP_X),)).build()
    ev = session.run_until_event(100)
    assert ev.kind == EventKind.VBP_HIT and ev.cycle == 0
    assert session.counters.instructions_retired == 0


def test_halt_event_when_no_breakpoints():
    session = make_recipe(COUNTDOWN).build()
    ev = session.run_until_event(10_000)
    assert ev.kind == EventKind.HALT


def test_timeout_is_a_result():
    session = make_recipe(FOREVER).build()
    result = session.run_until_event(max_cycles=10)
    assert isinstance(result, Timeout)
    assert result.cycle == 10


def test_hook_streams_without_stopping():
    loop_head = 0x1000 + 20  # the NOP inside the loop
    calls = []
    session = make_recipe(COUNTDOWN, script=(("vbp", loop_head, 0),)).build()
    session.register_hook(loop_head, "loop-hook", handler=calls.append)
    ev = session.run_until_event(10_000)
    assert ev.kind == EventKind.HALT  # never stopped before the end
    hooks = [e for e in session.event_log if e.kind == EventKind.HOOK_POINT]
    assert len(hooks) == 4  # one per loop iteration
    assert all(e.hook_id == "loop-hook" for e in hooks)
    assert len(calls) == 4


def test_hook_and_execute_flag_on_same_byte_hook_first():
    loop_head = 0x1000 + 20
    session = make_recipe(COUNTDOWN, script=(("vbp", loop_head, BP_X),)).build()
    session.register_hook(loop_head, "h")
    ev = session.run_until_event(10_000)
    assert ev.kind == EventKind.VBP_HIT
    kinds = [e.kind for e in session.event_log]
    assert kinds.index(EventKind.HOOK_POINT) < kinds.index(EventKind.VBP_HIT)


def test_unregistered_hook_stops_firing():
    loop_head = 0x1000 + 20
    session = make_recipe(COUNTDOWN, script=(("vbp", loop_head, 0),)).build()
    session.register_hook(loop_head, "h")
    session.run_until_event(30)  # a couple of iterations
    seen = len([e for e in session.event_log if e.kind == EventKind.HOOK_POINT])
    assert seen > 0
    session.unregister_hook(loop_head)
    session.run_until_event(10_000)
    hooks = [e for e in session.event_log if e.kind == EventKind.HOOK_POINT]
    assert len(hooks) == seen


def test_hook_requires_buddy_byte():
    session = make_recipe(COUNTDOWN, auto_attach=False).build()
    with pytest.raises(NoBuddyFrame):
        session.register_hook(0x1000, "h")


def test_hooks_do_not_change_architectural_state():
    clean = make_recipe(COUNTDOWN, trace=True).build()
    clean.run_to_completion(10_000)
    hooked = make_recipe(COUNTDOWN, trace=True).build()
    hooked.kernel.attach_buddy(0x1000)
    hooked.register_hook(0x1000 + 20, "h")
    hooked.run_to_completion(10_000)
    strip = lambda trace: [(pc, regs) for pc, _o, _rd, _rs, _ea, regs in trace]
    assert strip(clean.machine.trace) == strip(hooked.machine.trace)
    assert clean.machine.out_bytes == hooked.machine.out_bytes


def test_inject_external_sets_taint_and_writes():
    source = "org 0x1000\nstart: HALT\norg 0x2000\nbuf: dq 0\ndq 0\n"
    session = make_recipe(source, taint=True).build()
    session.kernel.attach_buddy(0x2000)
    session.inject_external(0x2000, bytes(range(16)))
    assert session.kernel.debug_read(0x2000, 16) == bytes(range(16))
    for i in range(16):
        assert session.kernel.read_vbp(0x2000 + i) & BP_TAINT


def test_inject_zero_length_is_noop():
    source = "org 0x1000\nstart: HALT\n"
    session = make_recipe(source).build()
    session.inject_external(0x9999000, b"")  # even the address is not validated


def test_inject_without_buddy_or_mapping_fails():
    source = "org 0x1000\nstart: HALT\norg 0x2000\nbuf: dq 0\n"
    session = make_recipe(source, auto_attach=False).build()
    with pytest.raises(NoBuddyFrame):
        session.inject_external(0x2000, b"x")
    with pytest.raises(PageFault):
        session.inject_external(0x5000, b"x")


def test_event_log_is_cycle_monotone():
    session = make_recipe(COUNTDOWN, mode=TrapMode.SINGLESTEP).build()
    session.run_to_completion(10_000)
    cycles = [e.cycle for e in session.event_log]
    assert cycles == sorted(cycles)
    assert len(session.event_log) > 0


def test_verify_equivalence_and_sensitivity():
    loop_head = 0x1000 + 20
    recipe = make_recipe(COUNTDOWN, script=(("vbp", loop_head, BP_X),))
    session = recipe.build()
    session.run_to_completion(10_000)
    report = session.verify_against_oracle()
    assert report.equivalent

    # corrupt the mirrored flag byte for the hit address: the replay must diverge
    entry = session.kernel.entry_for(loop_head)
    paddr = (entry.frame << 12) | (loop_head & 0xFFF)
    session.oracle.corrupt(paddr, 0)
    bad = session.verify_against_oracle()
    assert not bad.equivalent
    assert "shadow-map" in bad.detail or "flag state" in bad.detail


def test_verify_on_empty_program_is_trivially_equivalent():
    recipe = make_recipe("org 0x1000\nstart: HALT\n")
    session = recipe.build()
    session.run_to_completion(100)
    assert session.verify_against_oracle().equivalent


def test_export_log_stable_fields():
    import json
    session = make_recipe(COUNTDOWN, script=(("vbp", 0x1000, BP_X),)).build()
    session.run_to_completion(10_000)
    lines = session.export_log().strip().splitlines()
    assert lines
    for line in lines:
        rec = json.loads(line)
        assert set(rec) == {"kind", "vaddr", "access", "flags", "cycle", "hook_id"}
