"""CPU core: fetch-decode-execute with precise, side-effect-free trap delivery.

Every step follows a fixed order: debug-register execute check, instruction
fetch (EXECUTE check on the first byte, FETCH on the rest), decode, operand
checks (READ/WRITE, in ascending byte order), then execution and retirement.
A trap anywhere before retirement aborts the instruction with zero
architectural side effects: registers, flags, memory, and the PC are
exactly as before the step, so the debugger always observes the machine
*prior to* the trapped action.

Resuming past a hit adds a one-shot (vaddr, kind) suppression that skips
the matching per-byte check; suppressions accumulate while the same
instruction keeps faulting and are all dropped when it finally retires,
so a later re-execution of the same address traps again.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .isa import Op, decode
from .mmu import AccessKind, BuddyChecker, Mmu, PageFault, PerfCounters

__all__ = [
    "EventKind", "DebugEvent", "TrapCosts", "TrapConfig", "StepResult",
    "Machine", "MachineHaltedError", "M64",
]

M32 = 0xFFFF_FFFF
M64 = 0xFFFF_FFFF_FFFF_FFFF


class EventKind:
    """Debug event discriminators (stable strings, used on the wire)."""

    VBP_HIT = "VbpHit"
    INT3 = "Int3"
    SINGLE_STEP = "SingleStep"
    DR_HIT = "DrHit"
    HOOK_POINT = "HookPoint"
    PAGE_FAULT = "PageFault"
    INVALID_OPCODE = "InvalidOpcode"
    HALT = "Halt"
    EVICTION = "Eviction"

    # Events that represent a debugger context switch.
    DEBUG_EXITS = frozenset({VBP_HIT, INT3, SINGLE_STEP, DR_HIT, HOOK_POINT})
    # Events that stop the session (hooks and evictions stream past).
    BLOCKING = frozenset({VBP_HIT, INT3, SINGLE_STEP, DR_HIT, PAGE_FAULT,
                          INVALID_OPCODE, HALT})


@dataclass(frozen=True)
class DebugEvent:
    kind: str
    vaddr: int = 0
    access: AccessKind | None = None
    flags: int = 0
    cycle: int = 0
    hook_id: str | None = None
    reason: str | None = None

    def record(self) -> dict:
        return {
            "kind": self.kind,
            "vaddr": self.vaddr,
            "access": str(self.access) if self.access is not None else None,
            "flags": self.flags,
            "cycle": self.cycle,
            "hook_id": self.hook_id,
        }

    def __str__(self) -> str:
        parts = [f"{self.kind} vaddr={self.vaddr:#010x} cycle={self.cycle}"]
        if self.access is not None:
            parts.append(f"access={self.access}")
        if self.flags:
            parts.append(f"flags={self.flags:#04x}")
        if self.hook_id is not None:
            parts.append(f"hook={self.hook_id}")
        if self.reason:
            parts.append(f"reason={self.reason}")
        return " ".join(parts)


@dataclass(frozen=True)
class TrapCosts:
    """Synthetic cycle model for debugger context switches.

    A context switch into the debugger costs on the order of a thousand
    instructions on trap-and-emulate systems; buddy lookups cost a memory
    reference.  The costs feed the cycle counter the guest reads with
    RDTSC, which is what makes timing probes meaningful in a simulator.
    """

    debug_exit: int = 1000
    eviction: int = 1000
    buddy_ref: int = 1


@dataclass
class TrapConfig:
    taint: bool = False
    costs: TrapCosts = field(default_factory=TrapCosts)


@dataclass
class StepResult:
    events: list[DebugEvent]
    retired: bool


class MachineHaltedError(RuntimeError):
    pass


_ALU = {Op.ADD: lambda a, b: (a + b) & M64,
        Op.SUB: lambda a, b: (a - b) & M64,
        Op.XOR: lambda a, b: a ^ b}


class Machine:
    """Single-owner CPU state plus the step function."""

    def __init__(self, mmu: Mmu, config: TrapConfig | None = None):
        self.mmu = mmu
        self.counters: PerfCounters = mmu.counters
        self.config = config or TrapConfig()
        mmu.buddy_ref_cost = self.config.costs.buddy_ref
        self.checker = BuddyChecker(mmu.phys)
        self.regs = [0] * 8
        self.pc = 0
        self.zf = False
        self.tf = False
        self.cycle = 0
        self.halted = False
        self.reg_taint = [False] * 8
        self.suppressions: set[tuple[int, AccessKind]] = set()
        self.out_bytes = bytearray()
        self.drs = None          # legacy debug registers, when armed
        self.splitview = None    # legacy split-view router, when armed
        self.trace: list[tuple] | None = None  # (pc, op, rd, rs, ea, regs) when enabled

    # -- state handling -----------------------------------------------------

    def resume(self, vaddr: int, kind: AccessKind) -> None:
        """Suppress the next matching per-byte check until retirement."""
        self.suppressions.add((vaddr & M32, kind))

    def snapshot(self) -> dict:
        return {
            "regs": list(self.regs), "pc": self.pc, "zf": self.zf, "tf": self.tf,
            "cycle": self.cycle, "halted": self.halted,
            "reg_taint": list(self.reg_taint), "out": bytes(self.out_bytes),
        }

    def restore(self, snap: dict) -> None:
        self.regs = list(snap["regs"])
        self.pc = snap["pc"]
        self.zf = snap["zf"]
        self.tf = snap["tf"]
        self.cycle = snap["cycle"]
        self.halted = snap["halted"]
        self.reg_taint = list(snap["reg_taint"])
        self.out_bytes = bytearray(snap["out"])

    def read_tsc(self) -> int:
        return (self.cycle + self.counters.synthetic_cycles) & M64

    # -- stepping -----------------------------------------------------------

    def step(self) -> StepResult:
        """Execute (or trap on) one instruction."""
        if self.halted:
            raise MachineHaltedError("machine is halted")
        events: list[DebugEvent] = []
        pc = self.pc
        cyc = self.cycle
        mmu = self.mmu
        sup = self.suppressions

        drs = self.drs
        if drs is not None and drs.exec_hit(pc) and (pc, AccessKind.EXECUTE) not in sup:
            events.append(DebugEvent(EventKind.DR_HIT, vaddr=pc,
                                     access=AccessKind.EXECUTE, cycle=cyc))
            return StepResult(events, False)

        router = self.splitview.fetch_route if self.splitview is not None else None
        try:
            raw, plan = mmu.fetch_instruction(pc, sup, self.checker, fetch_router=router)
        except PageFault as f:
            events.append(DebugEvent(EventKind.PAGE_FAULT, vaddr=f.vaddr,
                                     cycle=cyc, reason=f.reason.value))
            return StepResult(events, False)
        for hva, hfl, hkind in plan.hooks:
            events.append(DebugEvent(EventKind.HOOK_POINT, vaddr=hva, access=hkind,
                                     flags=hfl, cycle=cyc))
        if plan.trap is not None:
            tva, tfl, tkind = plan.trap
            events.append(DebugEvent(EventKind.VBP_HIT, vaddr=tva, access=tkind,
                                     flags=tfl, cycle=cyc))
            return StepResult(events, False)

        instr = decode(raw)
        if not instr.valid:
            events.append(DebugEvent(EventKind.INVALID_OPCODE, vaddr=pc, cycle=cyc))
            return StepResult(events, False)

        op = instr.op
        regs = self.regs
        npc = (pc + instr.length) & M32
        taint_cfg = self.config.taint
        ea = None

        if op is Op.INT3:
            events.append(DebugEvent(EventKind.INT3, vaddr=pc, cycle=cyc))
            return StepResult(events, False)

        if op in (Op.LOAD8, Op.LOAD64, Op.STORE8, Op.STORE64):
            width = 8 if op in (Op.LOAD64, Op.STORE64) else 1
            is_store = op in (Op.STORE8, Op.STORE64)
            base = instr.rd if is_store else instr.rs
            ea = (regs[base] + instr.disp) & M32
            kind = AccessKind.WRITE if is_store else AccessKind.READ
            try:
                plan = mmu.data_access(ea, width, kind, sup, self.checker,
                                       want_bytes=taint_cfg)
            except PageFault as f:
                events.append(DebugEvent(EventKind.PAGE_FAULT, vaddr=f.vaddr,
                                         cycle=cyc, reason=f.reason.value))
                return StepResult(events, False)
            for hva, hfl, hkind in plan.hooks:
                events.append(DebugEvent(EventKind.HOOK_POINT, vaddr=hva, access=hkind,
                                         flags=hfl, cycle=cyc))
            if plan.trap is not None:
                tva, tfl, tkind = plan.trap
                events.append(DebugEvent(EventKind.VBP_HIT, vaddr=tva, access=tkind,
                                         flags=tfl, cycle=cyc))
                return StepResult(events, False)
            if drs is not None:
                hit = drs.data_hit(ea, width, kind)
                if hit is not None and (hit, kind) not in sup:
                    events.append(DebugEvent(EventKind.DR_HIT, vaddr=hit,
                                             access=kind, cycle=cyc))
                    return StepResult(events, False)
            if is_store:
                if self.splitview is not None:
                    ev = self.splitview.note_write(ea, width)
                    if ev is not None:
                        events.append(replace(ev, cycle=cyc))
                value = regs[instr.rs] & (M64 if width == 8 else 0xFF)
                blob = value.to_bytes(width, "little")
                off = 0
                for paddr, n in plan.runs:
                    mmu.phys.write(paddr, blob[off:off + n])
                    off += n
                if taint_cfg:
                    t = self.reg_taint[instr.rs]
                    for paddr, bp in plan.byte_info:
                        if not self.checker.write_taint(paddr, t, bp) and t:
                            self.counters.taint_dropped += 1
            else:
                blob = b"".join(mmu.phys.read(paddr, n) for paddr, n in plan.runs)
                regs[instr.rd] = int.from_bytes(blob, "little")
                if taint_cfg:
                    self.reg_taint[instr.rd] = plan.taint_or
        elif op is Op.MOVI:
            regs[instr.rd] = instr.imm
            if taint_cfg:
                self.reg_taint[instr.rd] = False
        elif op is Op.MOVR:
            regs[instr.rd] = regs[instr.rs]
            if taint_cfg:
                self.reg_taint[instr.rd] = self.reg_taint[instr.rs]
        elif op in _ALU:
            regs[instr.rd] = _ALU[op](regs[instr.rd], regs[instr.rs])
            if taint_cfg:
                self.reg_taint[instr.rd] |= self.reg_taint[instr.rs]
        elif op is Op.CMP:
            self.zf = regs[instr.rd] == regs[instr.rs]
        elif op is Op.JMP:
            npc = instr.branch_target(pc)
        elif op is Op.JZ:
            if self.zf:
                npc = instr.branch_target(pc)
        elif op is Op.JNZ:
            if not self.zf:
                npc = instr.branch_target(pc)
        elif op is Op.OUT:
            self.out_bytes.append(regs[instr.rs] & 0xFF)
        elif op is Op.RDTSC:
            regs[instr.rd] = self.read_tsc()
            if taint_cfg:
                self.reg_taint[instr.rd] = False
        elif op is Op.RDDR:
            regs[instr.rd] = self.drs.read_slot(instr.rs) if self.drs is not None else 0
            if taint_cfg:
                self.reg_taint[instr.rd] = False
        # HALT and NOP have no execute-stage effect.

        # Retire.
        self.pc = npc
        self.cycle = cyc + 1
        self.counters.instructions_retired += 1
        sup.clear()
        if self.trace is not None:
            self.trace.append((pc, op, instr.rd, instr.rs, ea, tuple(regs)))
        if self.tf:
            events.append(DebugEvent(EventKind.SINGLE_STEP, vaddr=self.pc,
                                     cycle=self.cycle))
        if op is Op.HALT:
            self.halted = True
            events.append(DebugEvent(EventKind.HALT, vaddr=pc, cycle=self.cycle))
        return StepResult(events, True)
