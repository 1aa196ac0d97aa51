"""Debugger controller: sessions, trap modes, hooks, and the shadow oracle.

A Session owns one machine/kernel pair and exactly one active trap mode.
It records every debug event in a cycle-ordered log, auto-dispatches hook
points without stopping, transparently resolves copy-on-write faults, and
knows how to step past a stop in each mode (suppression tokens for buddy
breakpoints and debug registers, the restore/step/re-arm dance for int3
and split-view trap bytes).

The ShadowOracle is an independent flat map from physical byte address to
flag byte, kept in lockstep with every kernel breakpoint mutation.  A run
can be re-executed against the oracle-backed checker (and with the TLB
disabled) to cross-check the MMU fast path event for event.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from enum import Enum

from .image import GuestImage
from .kernel import KernelSim, NoBuddyFrame
from .legacy import DebugRegisters, DrKind, Int3Manager, SplitView
from .machine import (
    DebugEvent, EventKind, Machine, TrapConfig, TrapCosts,
)
from .mmu import (
    BP_HOOK, BP_TAINT, BP_W, BP_X, BuddyChecker, M32, Mmu,
    OFFSET_MASK, PAGE_SHIFT, PAGE_SIZE, PageFault, PageFaultReason,
)

__all__ = [
    "TrapMode", "Timeout", "Session", "ShadowOracle", "ShadowMapChecker",
    "SessionRecipe", "RunCapture", "VerifyReport", "capture_run",
]


class TrapMode(str, Enum):
    VBP = "vbp"
    INT3 = "int3"
    SPLITVIEW = "splitview"
    SINGLESTEP = "singlestep"
    DEBUGREGS = "debugregs"


@dataclass(frozen=True)
class Timeout:
    """Cycle budget exhausted; a result, not a failure."""

    cycle: int


class ShadowOracle:
    """Flat physical-byte-address -> flag-byte map, mirrored per frame."""

    def __init__(self):
        self.frames: dict[int, bytearray] = {}

    def _frame(self, frame: int) -> bytearray:
        arr = self.frames.get(frame)
        if arr is None:
            arr = self.frames[frame] = bytearray(PAGE_SIZE)
        return arr

    def apply(self, event: tuple) -> None:
        tag = event[0]
        if tag == "set":
            _, paddr, value = event
            self._frame(paddr >> PAGE_SHIFT)[paddr & OFFSET_MASK] = value
        elif tag == "fill":
            _, frame, value = event
            self.frames[frame] = bytearray(bytes([value]) * PAGE_SIZE)
        elif tag == "restore_frame":
            _, frame, blob = event
            self.frames[frame] = bytearray(blob)
        elif tag == "drop_frame":
            self.frames.pop(event[1], None)

    def flags_at(self, paddr: int) -> int:
        arr = self.frames.get(paddr >> PAGE_SHIFT)
        return arr[paddr & OFFSET_MASK] if arr is not None else 0

    def write_taint(self, paddr: int, tainted: bool, bp_page: bool) -> bool:
        if not bp_page:
            return False
        arr = self._frame(paddr >> PAGE_SHIFT)
        i = paddr & OFFSET_MASK
        arr[i] = (arr[i] | BP_TAINT) if tainted else (arr[i] & ~BP_TAINT)
        return True

    def corrupt(self, paddr: int, flags: int) -> None:
        """Deliberately diverge one byte (sensitivity testing)."""
        self._frame(paddr >> PAGE_SHIFT)[paddr & OFFSET_MASK] = flags

    def serial(self) -> tuple:
        return tuple(sorted((fr, bytes(arr)) for fr, arr in self.frames.items()
                            if any(arr)))

    def matches_buddy_frames(self, kernel: KernelSim) -> bool:
        """Lockstep invariant: oracle equals live buddy frame contents."""
        for data, flag in kernel.allocator.pairs.items():
            live = kernel.mmu.phys.read(flag << PAGE_SHIFT, PAGE_SIZE)
            mine = bytes(self.frames.get(data, b"\x00" * PAGE_SIZE))
            if live != mine:
                return False
        return True


class ShadowMapChecker:
    """Per-byte checker backed by the oracle map instead of buddy frames."""

    check_all = True

    def __init__(self, oracle: ShadowOracle):
        self.oracle = oracle

    def flags_at(self, paddr: int) -> int:
        return self.oracle.flags_at(paddr)

    def write_taint(self, paddr: int, tainted: bool, bp_page: bool) -> bool:
        return self.oracle.write_taint(paddr, tainted, bp_page)


_RESUMABLE = frozenset({EventKind.VBP_HIT, EventKind.DR_HIT})


class Session:
    """One debugging session over one machine."""

    def __init__(self, kernel: KernelSim, machine: Machine,
                 mode: TrapMode = TrapMode.VBP):
        self.kernel = kernel
        self.machine = machine
        self.counters = machine.counters
        self.costs: TrapCosts = machine.config.costs
        self.oracle = ShadowOracle()
        kernel.add_bp_listener(self.oracle.apply)
        machine.checker = BuddyChecker(kernel.mmu.phys, mirror=self.oracle)
        self.int3 = Int3Manager(kernel)
        self.drs = DebugRegisters()
        self.splitview = SplitView(kernel, eviction_cost=self.costs.eviction)
        self.event_log: list[DebugEvent] = []
        self.hook_table: dict[int, str] = {}
        self.hook_handlers: dict[str, object] = {}
        self.event_listeners: list = []
        self.stopped_on: DebugEvent | None = None
        self.recipe: SessionRecipe | None = None
        self.mode = None
        self.set_mode(mode)

    # -- mode management ----------------------------------------------------

    def set_mode(self, mode: TrapMode) -> None:
        """Switch trap mode, tearing down the previous mechanism completely.

        int3 bytes are restored, debug registers disabled, split-view frames
        released, the trap flag cleared, and buddy flag bytes zeroed, so no
        instrumentation survives a mode switch.
        """
        if self.mode is not None:
            self.int3.restore_all()
            self.drs.clear_all()
            self.splitview.release_all()
            self.machine.tf = False
            self.machine.drs = None
            self.machine.splitview = None
            for data, flag in self.kernel.allocator.pairs.items():
                self.kernel.mmu.phys.write(flag << PAGE_SHIFT, bytes(PAGE_SIZE))
                self.kernel._notify("fill", data, 0)
            self.hook_table.clear()
            self.hook_handlers.clear()
        self.mode = mode
        if mode is TrapMode.SINGLESTEP:
            self.machine.tf = True
        elif mode is TrapMode.DEBUGREGS:
            self.machine.drs = self.drs
        elif mode is TrapMode.SPLITVIEW:
            self.machine.splitview = self.splitview

    def use_shadow_checker(self) -> None:
        self.machine.checker = ShadowMapChecker(self.oracle)

    # -- breakpoint commands --------------------------------------------------

    def add_breakpoint(self, vaddr: int, flags: int = BP_X) -> None:
        """Set a breakpoint through whatever mechanism the mode provides."""
        if self.mode is TrapMode.VBP:
            self.kernel.set_vbp(vaddr, flags)
        elif self.mode is TrapMode.INT3:
            self.int3.set(vaddr)
        elif self.mode is TrapMode.SPLITVIEW:
            self.splitview.add_breakpoint(vaddr)
        elif self.mode is TrapMode.DEBUGREGS:
            if flags & BP_X:
                kind = DrKind.EXEC
            elif flags & BP_W:
                kind = DrKind.WRITE
            else:
                kind = DrKind.READWRITE
            self.drs.alloc(vaddr, kind)
        # single-step mode traps everywhere already

    def register_hook(self, vaddr: int, hook_id: str, handler=None) -> None:
        flags = self.kernel.read_vbp(vaddr)  # raises NoBuddyFrame when unbacked
        self.kernel.set_vbp(vaddr, flags | BP_HOOK)
        self.hook_table[vaddr & M32] = hook_id
        if handler is not None:
            self.hook_handlers[hook_id] = handler

    def unregister_hook(self, vaddr: int) -> None:
        flags = self.kernel.read_vbp(vaddr)
        self.kernel.set_vbp(vaddr, flags & ~BP_HOOK)
        hook_id = self.hook_table.pop(vaddr & M32, None)
        self.hook_handlers.pop(hook_id, None)

    def inject_external(self, vaddr: int, data: bytes) -> None:
        """Write external bytes and mark every destination byte tainted."""
        if not data:
            return
        for off in range(len(data)):
            entry = self.kernel.entry_for(vaddr + off)
            if entry is None:
                raise PageFault(vaddr + off, PageFaultReason.NOT_PRESENT)
            if not entry.breakpoint:
                raise NoBuddyFrame(f"page {(vaddr + off) & ~OFFSET_MASK:#x} has no buddy frame")
        self.kernel.debug_write(vaddr, data)
        for off in range(len(data)):
            self.kernel.or_taint(vaddr + off)

    # -- event plumbing ----------------------------------------------------------

    def _record(self, ev: DebugEvent) -> DebugEvent:
        if ev.kind == EventKind.HOOK_POINT:
            ev = replace(ev, hook_id=self.hook_table.get(ev.vaddr))
        self.event_log.append(ev)
        if ev.kind in EventKind.DEBUG_EXITS:
            self.counters.debug_exits += 1
            self.counters.synthetic_cycles += self.costs.debug_exit
        elif ev.kind == EventKind.EVICTION:
            self.counters.debug_exits += 1  # handler cost charged at eviction
        for fn in self.event_listeners:
            fn(ev)
        if ev.kind == EventKind.HOOK_POINT and ev.hook_id is not None:
            handler = self.hook_handlers.get(ev.hook_id)
            if handler is not None:
                handler(ev)
        return ev

    def _advance_one(self) -> DebugEvent | None:
        """Step once; record events; return the first blocking event."""
        res = self.machine.step()
        blocking = None
        for ev in res.events:
            if (ev.kind == EventKind.PAGE_FAULT
                    and ev.reason == PageFaultReason.WRITE_PROTECTED.value
                    and self.kernel.handle_cow_fault(ev.vaddr)):
                break  # resolved transparently; re-step on the next loop
            ev = self._record(ev)
            if ev.kind == EventKind.HALT:
                self._halt_event = ev
            if blocking is None and ev.kind in EventKind.BLOCKING:
                blocking = ev
        return blocking

    _halt_event: DebugEvent | None = None

    # -- run control ------------------------------------------------------------

    def run_until_event(self, max_cycles: int | None = None,
                        deadline: int | None = None):
        """Step until a blocking event or the cycle budget runs out."""
        m = self.machine
        if deadline is None:
            deadline = (m.cycle + max_cycles) if max_cycles is not None else None
        while True:
            if m.halted:
                self.stopped_on = self._halt_event
                return self._halt_event
            if deadline is not None and m.cycle >= deadline:
                return Timeout(m.cycle)
            blocking = self._advance_one()
            if blocking is not None:
                self.stopped_on = blocking
                return blocking

    def step_once(self) -> DebugEvent | None:
        """Single debugger step; returns the blocking event if one fired."""
        if self.machine.halted:
            return self._halt_event
        blocking = self._advance_one()
        self.stopped_on = blocking
        return blocking

    def resume_last(self) -> None:
        ev = self.stopped_on
        if ev is not None and ev.kind in _RESUMABLE:
            self.machine.resume(ev.vaddr, ev.access)

    def _int3_step_past(self, vaddr: int) -> DebugEvent | None:
        """Restore the original byte, step it, re-arm the trap."""
        orig = self.int3.original_byte(vaddr)
        self.kernel.debug_write(vaddr, bytes([orig]))
        blocking = self._advance_one()
        if self.kernel.debug_read(vaddr, 1)[0] == orig:
            self.kernel.debug_write(vaddr, bytes([0xCC]))
        return blocking

    def _splitview_step_past(self, vaddr: int) -> DebugEvent | None:
        self.splitview.unshadow(vaddr)
        blocking = self._advance_one()
        self.splitview.reshadow(vaddr)
        return blocking

    def continue_run(self, max_cycles: int | None = None,
                     deadline: int | None = None):
        """Step past the current stop (mode-aware) and run on."""
        ev = self.stopped_on
        self.stopped_on = None
        if ev is not None and not self.machine.halted:
            if ev.kind in _RESUMABLE:
                self.machine.resume(ev.vaddr, ev.access)
            elif ev.kind == EventKind.INT3:
                blocking = None
                if self.mode is TrapMode.INT3 and self.int3.armed(ev.vaddr):
                    blocking = self._int3_step_past(ev.vaddr)
                elif self.mode is TrapMode.SPLITVIEW and self.splitview.armed(ev.vaddr):
                    blocking = self._splitview_step_past(ev.vaddr)
                if blocking is not None:
                    self.stopped_on = blocking
                    return blocking
        return self.run_until_event(max_cycles=max_cycles, deadline=deadline)

    def run_to_completion(self, max_cycles: int = 100_000):
        """Run with an immediate-resume policy until halt, fault, or timeout.

        Returns (status, final event/timeout); status is one of "halt",
        "timeout", "fault", or "stuck" (an unresumable stop such as a
        guest-owned int3).
        """
        deadline = self.machine.cycle + max_cycles
        if self.stopped_on is not None:
            ev = self.stopped_on
        else:
            ev = self.run_until_event(deadline=deadline)
        while True:
            if isinstance(ev, Timeout):
                return "timeout", ev
            kind = ev.kind
            if kind == EventKind.HALT:
                return "halt", ev
            if kind in (EventKind.PAGE_FAULT, EventKind.INVALID_OPCODE):
                return "fault", ev
            if kind == EventKind.INT3:
                if self.mode is TrapMode.INT3 and self.int3.armed(ev.vaddr):
                    pass  # continue_run performs the step-past protocol
                elif self.mode is TrapMode.SPLITVIEW and self.splitview.armed(ev.vaddr):
                    pass
                else:
                    return "stuck", ev
            ev = self.continue_run(deadline=deadline)

    # -- scripted setup ----------------------------------------------------------

    def apply_script(self, script) -> None:
        """Apply an ordered breakpoint script (the reproducible setup)."""
        for op, *args in script:
            if op == "vbp":
                self.kernel.set_vbp(args[0], args[1])
            elif op == "vbp_page":
                self.kernel.set_vbp_page(args[0], args[1])
            elif op == "attach":
                self.kernel.attach_buddy(args[0])
            elif op == "int3":
                self.int3.set(args[0])
            elif op == "dr":
                self.drs.set(args[0], args[1], DrKind(args[2]))
            elif op == "dr_alloc":
                self.drs.alloc(args[0], DrKind(args[1]))
            elif op == "splitview":
                self.splitview.instrument(args[0], set(args[1]))
            elif op == "hook":
                self.register_hook(args[0], args[1])
            elif op == "inject":
                self.inject_external(args[0], bytes(args[1]))
            elif op == "break":
                self.add_breakpoint(*args)
            else:
                raise ValueError(f"unknown script op {op!r}")

    # -- log export -----------------------------------------------------------------

    def export_log(self) -> str:
        return "\n".join(json.dumps(ev.record(), sort_keys=True)
                         for ev in self.event_log) + ("\n" if self.event_log else "")

    def verify_against_oracle(self, budget: int | None = None) -> "VerifyReport":
        """Re-run this session's recipe against the independent per-byte map
        (and with the TLB disabled) and compare event streams and final state."""
        if self.recipe is None:
            raise ValueError("session was not built from a recipe")
        base = RunCapture.from_session(self)
        return compare_against_variants(self.recipe, base, budget=budget)


# -- reproducible runs -------------------------------------------------------


@dataclass
class SessionRecipe:
    """Everything needed to rebuild and re-run a session deterministically."""

    image: GuestImage
    blob: bytes
    script: tuple = ()
    mode: TrapMode = TrapMode.VBP
    taint: bool = False
    budget: int = 100_000
    phys_size: int = 4 * 1024 * 1024
    costs: TrapCosts = field(default_factory=TrapCosts)
    trace: bool = False
    auto_attach: bool = True

    def build(self, tlb_enabled: bool = True, shadow_checker: bool = False) -> Session:
        mmu = Mmu(self.phys_size, tlb_enabled=tlb_enabled)
        kernel = KernelSim(mmu, auto_attach=self.auto_attach)
        machine = Machine(mmu, TrapConfig(taint=self.taint, costs=self.costs))
        session = Session(kernel, machine, mode=self.mode)
        session.recipe = self
        machine.pc = kernel.load_image(self.image, self.blob)
        if self.trace:
            machine.trace = []
        session.apply_script(self.script)
        if shadow_checker:
            session.use_shadow_checker()
        return session

    def run(self, tlb_enabled: bool = True, shadow_checker: bool = False) -> "RunCapture":
        session = self.build(tlb_enabled=tlb_enabled, shadow_checker=shadow_checker)
        return RunCapture.from_session(session, run=True)


@dataclass
class RunCapture:
    """Observable outcome of a completed run, for equivalence checks."""

    status: str
    events: tuple
    pc: int
    regs: tuple
    out: bytes
    guest_mem_sha: str
    flag_state: tuple

    @classmethod
    def from_session(cls, session: Session, run: bool = False) -> "RunCapture":
        status = "captured"
        if run:
            status, _ = session.run_to_completion(session.recipe.budget)
        digest = hashlib.sha256()
        space = session.kernel.current
        for vpage in sorted(space.mappings):
            digest.update(session.kernel.debug_read(vpage << PAGE_SHIFT, PAGE_SIZE))
        return cls(status=status, events=tuple(session.event_log),
                   pc=session.machine.pc, regs=tuple(session.machine.regs),
                   out=bytes(session.machine.out_bytes),
                   guest_mem_sha=digest.hexdigest(),
                   flag_state=session.oracle.serial())


@dataclass
class VerifyReport:
    equivalent: bool
    detail: str = "equivalent"


def _diff_captures(name: str, a: RunCapture, b: RunCapture) -> str | None:
    for i, (ea, eb) in enumerate(zip(a.events, b.events)):
        if ea != eb:
            return f"{name}: event {i} differs: {ea} vs {eb}"
    if len(a.events) != len(b.events):
        return f"{name}: event count {len(a.events)} vs {len(b.events)}"
    for label, va, vb in (("pc", a.pc, b.pc), ("regs", a.regs, b.regs),
                          ("out", a.out, b.out),
                          ("guest memory", a.guest_mem_sha, b.guest_mem_sha),
                          ("flag state", a.flag_state, b.flag_state)):
        if va != vb:
            return f"{name}: final {label} differs"
    return None


def compare_against_variants(recipe: SessionRecipe, base: RunCapture,
                             budget: int | None = None) -> VerifyReport:
    if budget is not None:
        recipe = replace(recipe, budget=budget)
    for name, kwargs in (("tlb-off", {"tlb_enabled": False}),
                         ("shadow-map", {"shadow_checker": True})):
        diff = _diff_captures(name, base, recipe.run(**kwargs))
        if diff is not None:
            return VerifyReport(False, diff)
    return VerifyReport(True)


def capture_run(recipe: SessionRecipe, **kwargs) -> RunCapture:
    return recipe.run(**kwargs)
