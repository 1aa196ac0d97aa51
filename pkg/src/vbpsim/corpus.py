"""Adversarial and benchmark guests plus the scenario harness.

Each scenario pairs a guest fixture with one trap mode, a breakpoint
script, and a pass condition stated at trace level (OUT bytes, exact
events, counter identities).  Guests talk to the harness only through
the OUT port and by halting, so every assertion is byte-exact and every
run is deterministic (the timestamp counter is cycle-derived).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

from .asm import Program, Segment, assemble
from .debugger import SessionRecipe, TrapMode, compare_against_variants
from .image import build_image
from .isa import LENGTH_BY_BYTE, Instruction, Op, encode
from .machine import EventKind
from .mmu import AccessKind, BP_FETCH, BP_R, BP_TAINT, BP_W, BP_X, PAGE_SIZE

__all__ = [
    "FIXTURES", "HOT_LOOP_ITERS", "UnknownScenario", "ScenarioResult",
    "fixture_source", "fixture_program", "fixture_recipe", "scenario_names",
    "run_scenario", "run_all_scenarios", "instruction_addresses",
    "random_case", "check_random_case",
]

FIXTURES = (
    "checksum_self", "overwrite_self", "migrate_code", "dr_probe",
    "timing_probe", "misaligned_victim", "taint_memcpy", "hot_loop_bench",
)

HOT_LOOP_ITERS = 64
TIMING_LOOP_ITERS = 20


class UnknownScenario(Exception):
    pass


@dataclass
class ScenarioResult:
    name: str
    passed: bool
    detail: str
    status: str
    events: tuple
    out: bytes
    counters: dict[str, int]
    extra: dict = field(default_factory=dict)

    def record(self) -> dict:
        return {
            "name": self.name, "passed": self.passed, "detail": self.detail,
            "status": self.status, "out": self.out.hex(),
            "events": len(self.events), **self.extra,
        }


def fixture_source(name: str) -> str:
    if name not in FIXTURES:
        raise UnknownScenario(f"unknown guest {name!r}")
    return resources.files("vbpsim.fixtures").joinpath(f"{name}.asm").read_text()


@lru_cache(maxsize=None)
def fixture_program(name: str) -> Program:
    return assemble(fixture_source(name))


def fixture_recipe(name: str, script: tuple = (), mode: TrapMode = TrapMode.VBP,
                   taint: bool = False, budget: int = 200_000,
                   trace: bool = False) -> SessionRecipe:
    image, blob = build_image(fixture_program(name))
    return SessionRecipe(image=image, blob=blob, script=script, mode=mode,
                         taint=taint, budget=budget, trace=trace)


def instruction_addresses(program: Program, start: int, count: int) -> list[int]:
    """First ``count`` instruction addresses, walking lengths from ``start``."""
    for seg in program.segments:
        if seg.base <= start < seg.end:
            out = []
            addr = start
            while len(out) < count and addr < seg.end:
                out.append(addr)
                addr += LENGTH_BY_BYTE[seg.data[addr - seg.base]]
            return out
    raise ValueError(f"{start:#x} is not inside any segment")


def _run(recipe: SessionRecipe):
    session = recipe.build()
    status, last = session.run_to_completion(recipe.budget)
    return session, status


def _events_of(session, kind: str) -> list:
    return [e for e in session.event_log if e.kind == kind]


@lru_cache(maxsize=None)
def _clean_capture(name: str):
    """Uninstrumented reference run: (status, out bytes, retired trace)."""
    recipe = fixture_recipe(name, trace=True)
    session, status = _run(recipe)
    return status, bytes(session.machine.out_bytes), tuple(session.machine.trace)


def _u64_out(out: bytes) -> int:
    if len(out) != 8:
        raise ValueError(f"expected 8 OUT bytes, got {len(out)}")
    return int.from_bytes(out, "little")


# -- scenario definitions ------------------------------------------------------


def _sc_checksum_vbp() -> ScenarioResult:
    prog = fixture_program("checksum_self")
    addrs = (instruction_addresses(prog, prog.symbols["start"], 4)
             + instruction_addresses(prog, prog.symbols["emit"], 4))
    script = tuple(("vbp", a, BP_X) for a in addrs)
    session, status = _run(fixture_recipe("checksum_self", script))
    _, clean_out, _ = _clean_capture("checksum_self")
    out = bytes(session.machine.out_bytes)
    hits = _events_of(session, EventKind.VBP_HIT)
    ok = status == "halt" and out == clean_out and len(hits) == len(addrs)
    detail = ("checksum identical to clean run" if ok else
              f"status={status} out={out.hex()} clean={clean_out.hex()} hits={len(hits)}")
    return ScenarioResult("checksum_self.vbp", ok, detail, status,
                          tuple(session.event_log), out, session.counters.as_dict(),
                          {"breakpoints": len(addrs)})


def _sc_checksum_int3() -> ScenarioResult:
    prog = fixture_program("checksum_self")
    addrs = (instruction_addresses(prog, prog.symbols["start"], 4)
             + instruction_addresses(prog, prog.symbols["emit"], 4))
    script = tuple(("int3", a) for a in addrs)
    session, status = _run(fixture_recipe("checksum_self", script, mode=TrapMode.INT3))
    _, clean_out, _ = _clean_capture("checksum_self")
    out = bytes(session.machine.out_bytes)
    ok = status == "halt" and out != clean_out
    detail = ("guest detected the patched bytes" if ok else
              f"status={status} out={out.hex()} clean={clean_out.hex()}")
    return ScenarioResult("checksum_self.int3", ok, detail, status,
                          tuple(session.event_log), out, session.counters.as_dict())


def _sc_overwrite(mode: TrapMode) -> ScenarioResult:
    prog = fixture_program("overwrite_self")
    target = prog.symbols["target"]
    if mode is TrapMode.VBP:
        script = (("vbp", target, BP_X),)
    elif mode is TrapMode.INT3:
        script = (("int3", target),)
    else:
        script = (("splitview", target & ~(PAGE_SIZE - 1), (target,)),)
    session, status = _run(fixture_recipe("overwrite_self", script, mode=mode))
    out = bytes(session.machine.out_bytes)
    hits = [e for e in _events_of(session, EventKind.VBP_HIT) if e.vaddr == target]
    evictions = _events_of(session, EventKind.EVICTION)
    int3s = _events_of(session, EventKind.INT3)
    if mode is TrapMode.VBP:
        ok = (status == "halt" and out == b"\x5a" and len(hits) == 1
              and hits[0].access == AccessKind.EXECUTE)
        detail = "breakpoint survived the overwrite" if ok else f"hits={hits} out={out.hex()}"
    elif mode is TrapMode.SPLITVIEW:
        ok = (status == "halt" and out == b"\x5a" and len(evictions) == 1
              and not int3s and not hits)
        detail = "eviction, then no hit" if ok else f"evictions={len(evictions)} int3s={len(int3s)}"
    else:
        ok = status == "halt" and out == b"\x5a" and not int3s
        detail = "trap byte silently destroyed" if ok else f"int3s={int3s} out={out.hex()}"
    return ScenarioResult(f"overwrite_self.{mode.value}", ok, detail, status,
                          tuple(session.event_log), out, session.counters.as_dict())


def _sc_migrate(mode: TrapMode) -> ScenarioResult:
    prog = fixture_program("migrate_code")
    victim = prog.symbols["victim"]
    dest = prog.symbols["dest"]
    if mode is TrapMode.VBP:
        script = (("vbp", victim, BP_W | BP_X),)
    elif mode is TrapMode.INT3:
        script = (("int3", victim),)
    else:
        script = (("splitview", victim & ~(PAGE_SIZE - 1), (victim,)),)
    session, status = _run(fixture_recipe("migrate_code", script, mode=mode))
    out = bytes(session.machine.out_bytes)
    hits = [e for e in _events_of(session, EventKind.VBP_HIT) if e.vaddr == victim]
    evictions = _events_of(session, EventKind.EVICTION)
    int3s = _events_of(session, EventKind.INT3)
    if mode is TrapMode.VBP:
        ok = status == "halt" and out == b"\x33" and len(hits) == 1
        detail = ("original-address breakpoint fired on migration"
                  if ok else f"hits={hits} out={out.hex()}")
    elif mode is TrapMode.SPLITVIEW:
        ok = (status == "halt" and out == b"\x33" and len(evictions) == 1
              and not int3s and not hits)
        detail = "erase evicted the breakpoint" if ok else f"evictions={len(evictions)}"
    else:
        stray = [e for e in int3s if e.vaddr == dest]
        at_victim = [e for e in int3s if e.vaddr == victim]
        ok = status == "stuck" and not at_victim and len(stray) == 1 and out == b""
        detail = ("trap migrated into the copy at the wrong address"
                  if ok else f"int3s={[hex(e.vaddr) for e in int3s]} status={status}")
    return ScenarioResult(f"migrate_code.{mode.value}", ok, detail, status,
                          tuple(session.event_log), out, session.counters.as_dict())


def _sc_dr_probe(variant: str) -> ScenarioResult:
    prog = fixture_program("dr_probe")
    if variant == "clean":
        session, status = _run(fixture_recipe("dr_probe"))
        want = b"\x4f"
    elif variant == "debugregs":
        session, status = _run(fixture_recipe(
            "dr_probe", (("dr", 0, 0x4000, "write"),), mode=TrapMode.DEBUGREGS))
        want = b"\xdd"
    else:  # vbp: one resumed execute hit, still invisible to the probe
        session, status = _run(fixture_recipe(
            "dr_probe", (("vbp", prog.symbols["start"], BP_X),)))
        want = b"\x4f"
    out = bytes(session.machine.out_bytes)
    ok = status == "halt" and out == want
    return ScenarioResult(f"dr_probe.{variant}", ok,
                          f"out={out.hex()} want={want.hex()}", status,
                          tuple(session.event_log), out, session.counters.as_dict())


def _sc_timing_contrast() -> ScenarioResult:
    prog = fixture_program("timing_probe")
    ss_session, ss_status = _run(fixture_recipe("timing_probe", mode=TrapMode.SINGLESTEP))
    vbp_session, vbp_status = _run(fixture_recipe(
        "timing_probe", (("vbp", prog.symbols["start"], BP_X),)))
    ss_delta = _u64_out(bytes(ss_session.machine.out_bytes))
    vbp_delta = _u64_out(bytes(vbp_session.machine.out_bytes))
    ok = (ss_status == "halt" and vbp_status == "halt"
          and ss_delta >= 10 * vbp_delta)
    return ScenarioResult(
        "timing_probe.contrast", ok,
        f"single-step delta {ss_delta} vs buddy-frame delta {vbp_delta}",
        ss_status, tuple(vbp_session.event_log), b"",
        vbp_session.counters.as_dict(),
        {"singlestep_delta": ss_delta, "vbp_delta": vbp_delta})


def _sc_misaligned(variant: str) -> ScenarioResult:
    prog = fixture_program("misaligned_victim")
    jmp = prog.symbols["start"]
    if variant == "clean":
        session, status = _run(fixture_recipe("misaligned_victim"))
        out = bytes(session.machine.out_bytes)
        ok = status == "halt" and out == b"\x77"
        detail = f"out={out.hex()}"
    elif variant == "int3_misaligned":
        session, status = _run(fixture_recipe(
            "misaligned_victim", (("int3", jmp + 2),), mode=TrapMode.INT3))
        out = bytes(session.machine.out_bytes)
        faults = _events_of(session, EventKind.PAGE_FAULT)
        ok = (status == "fault" and out == b"" and len(faults) == 1
              and faults[0].vaddr == 0xDC15)
        detail = (f"jump corrupted to {faults[0].vaddr:#x}" if faults else "no fault")
    else:  # vbp_fetch: one FETCH flag on every byte of the jump
        script = tuple(("vbp", jmp + i, BP_FETCH) for i in range(5))
        recipe = fixture_recipe("misaligned_victim", script, trace=True)
        session, status = _run(recipe)
        out = bytes(session.machine.out_bytes)
        hits = _events_of(session, EventKind.VBP_HIT)
        _, clean_out, clean_trace = _clean_capture("misaligned_victim")
        fired = [e.vaddr for e in hits]
        ok = (status == "halt" and out == clean_out
              and fired == [jmp + i for i in range(5)]
              and all(e.cycle == 0 for e in hits)
              and tuple(session.machine.trace) == clean_trace)
        detail = (f"5 fetch hits, each once, trace equals clean run"
                  if ok else f"hits={[hex(v) for v in fired]} out={out.hex()}")
    return ScenarioResult(f"misaligned_victim.{variant}", ok, detail, status,
                          tuple(session.event_log), out, session.counters.as_dict())


def _taint_oracle(prog: Program, trace, seeded: set[int], buddy_pages: set[int]):
    """Independent taint propagation: replay the retired-instruction trace
    with its own rules over a flat vaddr->bool map."""
    mem = {a: True for a in seeded}
    reg = [False] * 8
    for _pc, op, rd, rs, ea, _regs in trace:
        if op in (Op.MOVI, Op.RDTSC, Op.RDDR):
            reg[rd] = False
        elif op is Op.MOVR:
            reg[rd] = reg[rs]
        elif op in (Op.ADD, Op.SUB, Op.XOR):
            reg[rd] = reg[rd] or reg[rs]
        elif op in (Op.LOAD8, Op.LOAD64):
            width = 8 if op is Op.LOAD64 else 1
            reg[rd] = any(mem.get(ea + i, False) for i in range(width))
        elif op in (Op.STORE8, Op.STORE64):
            width = 8 if op is Op.STORE64 else 1
            for i in range(width):
                if (ea + i) >> 12 in buddy_pages:
                    mem[ea + i] = reg[rs]
    return mem


def _sc_taint_memcpy() -> ScenarioResult:
    prog = fixture_program("taint_memcpy")
    src = prog.symbols["srcbuf"]
    dst = prog.symbols["dstbuf"]
    payload = bytes(range(0xA0, 0xB0))
    script = (("attach", src), ("inject", src, tuple(payload)))
    recipe = fixture_recipe("taint_memcpy", script, taint=True, trace=True)
    session, status = _run(recipe)
    out = bytes(session.machine.out_bytes)
    got = [bool(session.kernel.read_vbp(dst + i) & BP_TAINT) for i in range(16)]
    copied = session.kernel.debug_read(dst, 16)
    buddy_pages = {vp for vp, e in session.kernel.current.mappings.items() if e.breakpoint}
    oracle = _taint_oracle(prog, session.machine.trace,
                           {src + i for i in range(16)}, buddy_pages)
    oracle_dst = [oracle.get(dst + i, False) for i in range(16)]
    src_taint = [bool(session.kernel.read_vbp(src + i) & BP_TAINT) for i in range(16)]
    oracle_src = [oracle.get(src + i, False) for i in range(16)]
    ok = (status == "halt" and out == b"\xd1" and copied == payload
          and all(got) and got == oracle_dst and src_taint == oracle_src)
    detail = ("all 16 destination taint bits set, oracle agrees"
              if ok else f"taint={got} oracle={oracle_dst}")
    return ScenarioResult("taint_memcpy.vbp", ok, detail, status,
                          tuple(session.event_log), out, session.counters.as_dict())


def _sc_hot_loop(variant: str) -> ScenarioResult:
    prog = fixture_program("hot_loop_bench")
    if variant == "clean":
        session, status = _run(fixture_recipe("hot_loop_bench"))
        c = session.counters
        ok = status == "halt" and c.buddy_refs == 0 and c.debug_exits == 0
        detail = f"buddy_refs={c.buddy_refs} with no instrumented pages"
    elif variant == "vbp":
        script = (("vbp", prog.symbols["loop"], BP_X),)
        session, status = _run(fixture_recipe("hot_loop_bench", script))
        c = session.counters
        ok = (status == "halt" and c.debug_exits == HOT_LOOP_ITERS
              and c.buddy_refs <= c.data_refs + c.fetch_refs)
        detail = f"debug_exits={c.debug_exits} for {HOT_LOOP_ITERS} iterations"
    else:  # singlestep
        session, status = _run(fixture_recipe("hot_loop_bench", mode=TrapMode.SINGLESTEP))
        c = session.counters
        ok = status == "halt" and c.debug_exits == c.instructions_retired
        detail = f"debug_exits={c.debug_exits} retired={c.instructions_retired}"
    return ScenarioResult(f"hot_loop_bench.{variant}", ok, detail, status,
                          tuple(session.event_log), bytes(session.machine.out_bytes),
                          session.counters.as_dict())


_SCENARIOS = {
    "checksum_self.vbp": _sc_checksum_vbp,
    "checksum_self.int3": _sc_checksum_int3,
    "overwrite_self.vbp": lambda: _sc_overwrite(TrapMode.VBP),
    "overwrite_self.splitview": lambda: _sc_overwrite(TrapMode.SPLITVIEW),
    "overwrite_self.int3": lambda: _sc_overwrite(TrapMode.INT3),
    "migrate_code.vbp": lambda: _sc_migrate(TrapMode.VBP),
    "migrate_code.splitview": lambda: _sc_migrate(TrapMode.SPLITVIEW),
    "migrate_code.int3": lambda: _sc_migrate(TrapMode.INT3),
    "dr_probe.clean": lambda: _sc_dr_probe("clean"),
    "dr_probe.debugregs": lambda: _sc_dr_probe("debugregs"),
    "dr_probe.vbp": lambda: _sc_dr_probe("vbp"),
    "timing_probe.contrast": _sc_timing_contrast,
    "misaligned_victim.clean": lambda: _sc_misaligned("clean"),
    "misaligned_victim.int3_misaligned": lambda: _sc_misaligned("int3_misaligned"),
    "misaligned_victim.vbp_fetch": lambda: _sc_misaligned("vbp_fetch"),
    "taint_memcpy.vbp": _sc_taint_memcpy,
    "hot_loop_bench.clean": lambda: _sc_hot_loop("clean"),
    "hot_loop_bench.vbp": lambda: _sc_hot_loop("vbp"),
    "hot_loop_bench.singlestep": lambda: _sc_hot_loop("singlestep"),
}


def scenario_names() -> list[str]:
    return list(_SCENARIOS)


def run_scenario(name: str) -> ScenarioResult:
    fn = _SCENARIOS.get(name)
    if fn is None:
        raise UnknownScenario(f"unknown scenario {name!r}")
    return fn()


def run_all_scenarios() -> list[ScenarioResult]:
    return [run_scenario(name) for name in _SCENARIOS]


# -- bench matrix ----------------------------------------------------------------

BENCH_GUESTS = ("hot_loop_bench", "checksum_self", "misaligned_victim")
BENCH_MODES = (TrapMode.VBP, TrapMode.INT3, TrapMode.SPLITVIEW, TrapMode.SINGLESTEP)
BENCH_BP_COUNTS = (0, 1, 4)

BENCH_COLUMNS = ("guest", "mode", "bps", "instructions", "data_refs",
                 "buddy_refs", "debug_exits", "synthetic_cycles", "status")


def _bench_script(guest: str, mode: TrapMode, k: int) -> tuple:
    if k == 0 or mode is TrapMode.SINGLESTEP:
        return ()
    prog = fixture_program(guest)
    if guest == "misaligned_victim" and mode is TrapMode.INT3:
        # the canonical misaligned placement: byte 2 of the 5-byte jump
        return (("int3", prog.symbols["start"] + 2),)
    addrs = instruction_addresses(prog, prog.entry, k)
    if mode is TrapMode.VBP:
        return tuple(("vbp", a, BP_X) for a in addrs)
    if mode is TrapMode.INT3:
        return tuple(("int3", a) for a in addrs)
    page = prog.entry & ~(PAGE_SIZE - 1)
    return (("splitview", page, tuple(addrs)),)


def bench_rows(guests=BENCH_GUESTS, modes=BENCH_MODES,
               bp_counts=BENCH_BP_COUNTS) -> list[dict]:
    """Run the guest x mode x breakpoint-count matrix.

    Rows whose OUT bytes or final status differ from the clean run are
    marked DIVERGED; everything else is deterministic and reproducible.
    """
    rows = []
    for guest in guests:
        clean_status, clean_out, _ = _clean_capture(guest)
        for mode in modes:
            counts = (0,) if mode is TrapMode.SINGLESTEP else bp_counts
            seen_scripts = set()
            for k in counts:
                script = _bench_script(guest, mode, k)
                if script in seen_scripts:
                    continue
                seen_scripts.add(script)
                session, status = _run(fixture_recipe(guest, script, mode=mode))
                c = session.counters
                out = bytes(session.machine.out_bytes)
                if status == "timeout":
                    verdict = "TIMEOUT"
                elif out != clean_out or (status == "halt") != (clean_status == "halt"):
                    verdict = "DIVERGED"
                else:
                    verdict = "ok"
                nbps = sum(len(op[2]) if op[0] == "splitview" else 1 for op in script)
                rows.append({
                    "guest": guest, "mode": mode.value, "bps": nbps,
                    "instructions": c.instructions_retired,
                    "data_refs": c.data_refs, "buddy_refs": c.buddy_refs,
                    "fetch_refs": c.fetch_refs,
                    "debug_exits": c.debug_exits,
                    "synthetic_cycles": c.synthetic_cycles, "status": verdict,
                })
    return rows


def bench_table(rows: list[dict]) -> str:
    lines = ["\t".join(BENCH_COLUMNS)]
    for row in rows:
        lines.append("\t".join(str(row[col]) for col in BENCH_COLUMNS))
    return "\n".join(lines) + "\n"


# -- randomized oracle-equivalence cases ----------------------------------------


_RAND_DESTS = (0, 1, 2, 3, 4, 5)


def random_case(rng: random.Random) -> SessionRecipe:
    """One randomized (program, breakpoint placement) instance.

    The program keeps R6 pointing at a scratch page and R7 at the code
    base; loads and stores stay inside those pages, branches target real
    instruction boundaries (mostly forward), and the tail is HALT.
    """
    code_base = 0x1000
    scratch = 0x2000
    instrs: list[Instruction] = [
        Instruction(Op.MOVI, rd=6, imm=scratch),
        Instruction(Op.MOVI, rd=7, imm=code_base),
    ]
    branches: list[int] = []
    n = rng.randrange(8, 36)
    for _ in range(n):
        r = rng.random()
        rd = rng.choice(_RAND_DESTS)
        rs = rng.randrange(8)
        if r < 0.22:
            instrs.append(Instruction(Op.MOVI, rd=rd, imm=rng.randrange(1 << 16)))
        elif r < 0.40:
            op = rng.choice((Op.ADD, Op.SUB, Op.XOR, Op.CMP, Op.MOVR))
            instrs.append(Instruction(op, rd=rd, rs=rs if op is not Op.MOVR else rng.choice(_RAND_DESTS)))
        elif r < 0.62:
            op = rng.choice((Op.LOAD8, Op.LOAD64, Op.STORE8, Op.STORE64))
            disp = rng.randrange(0, PAGE_SIZE - 8)
            if op in (Op.LOAD8, Op.LOAD64):
                instrs.append(Instruction(op, rd=rd, rs=6, disp=disp))
            else:
                instrs.append(Instruction(op, rd=6, rs=rd, disp=disp))
        elif r < 0.70:
            # read own code bytes
            instrs.append(Instruction(Op.LOAD8, rd=rd, rs=7, disp=rng.randrange(0, 64)))
        elif r < 0.82:
            branches.append(len(instrs))
            instrs.append(Instruction(rng.choice((Op.JZ, Op.JNZ, Op.JMP)), disp=0))
        elif r < 0.90:
            instrs.append(Instruction(Op.OUT, rs=rng.choice(_RAND_DESTS)))
        elif r < 0.96:
            instrs.append(Instruction(Op.RDTSC, rd=rd))
        elif r < 0.98:
            instrs.append(Instruction(Op.RDDR, rd=rd, rs=rng.randrange(4)))
        else:
            instrs.append(Instruction(Op.INT3))
    instrs.append(Instruction(Op.HALT))

    addrs: list[int] = []
    addr = code_base
    for ins in instrs:
        addrs.append(addr)
        addr += ins.length
    for idx in branches:
        if rng.random() < 0.8:
            lo, hi = idx + 1, len(instrs) - 1
        else:
            lo, hi = max(0, idx - 6), idx
        target = addrs[rng.randrange(lo, hi + 1)] if hi >= lo else addrs[-1]
        rel = target - (addrs[idx] + 5)
        instrs[idx] = Instruction(instrs[idx].op, disp=rel)
    code = b"".join(encode(i) for i in instrs)

    program = Program(
        segments=[Segment(code_base, code), Segment(scratch, bytes(16))],
        symbols={"start": code_base}, entry=code_base)
    image, blob = build_image(program)

    taint = rng.random() < 0.4
    script: list[tuple] = []
    if taint and rng.random() < 0.7:
        off = rng.randrange(0, PAGE_SIZE - 32)
        payload = tuple(rng.randrange(256) for _ in range(rng.randrange(1, 17)))
        script.append(("attach", scratch))
        script.append(("inject", scratch + off, payload))
    for i in range(rng.randrange(0, 9)):
        if rng.random() < 0.5:
            vaddr = code_base + rng.randrange(0, len(code))
        else:
            vaddr = scratch + rng.randrange(0, PAGE_SIZE)
        flags = rng.randrange(1, 0x40)
        if rng.random() < 0.08:
            script.append(("vbp_page", vaddr, rng.choice((BP_R, BP_W, BP_TAINT))))
        else:
            script.append(("vbp", vaddr, flags & ~0x10))
            if flags & 0x10:
                script.append(("hook", vaddr, f"h{i}"))
    return SessionRecipe(image=image, blob=blob, script=tuple(script),
                         taint=taint, budget=150, phys_size=1024 * 1024)


def check_random_case(recipe: SessionRecipe):
    """Run TLB-on, TLB-off, and shadow-map variants; compare everything."""
    base = recipe.run()
    return compare_against_variants(recipe, base)
