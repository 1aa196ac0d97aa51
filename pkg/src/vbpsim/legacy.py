"""Legacy trapping baselines: int3 patching, debug registers, split views.

These are the mechanisms the buddy-frame design is measured against, kept
honest on purpose: int3 writes the trap byte into the shared data frame
where the guest can read it, debug registers are four detectable slots,
and the split view serves sanitized bytes on reads while any guest write
to an instrumented page evicts its breakpoints.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .kernel import KernelSim
from .machine import DebugEvent, EventKind
from .mmu import AccessKind, M32, OFFSET_MASK, PAGE_SHIFT, PAGE_SIZE

__all__ = [
    "LegacyError", "AlreadySet", "NotSet", "SlotOutOfRange", "DrExhausted",
    "DrKind", "DebugRegisters", "Int3Manager", "SplitView", "INT3_BYTE",
]

INT3_BYTE = 0xCC


class LegacyError(Exception):
    pass


class AlreadySet(LegacyError):
    pass


class NotSet(LegacyError):
    pass


class SlotOutOfRange(LegacyError):
    pass


class DrExhausted(LegacyError):
    pass


class DrKind(str, Enum):
    EXEC = "exec"
    WRITE = "write"
    READWRITE = "rw"


@dataclass
class DrSlot:
    vaddr: int = 0
    kind: DrKind = DrKind.EXEC
    enabled: bool = False


class DebugRegisters:
    """Four watch/break slots, readable by the guest via RDDR."""

    SLOTS = 4

    def __init__(self):
        self.slots = [DrSlot() for _ in range(self.SLOTS)]

    def set(self, slot: int, vaddr: int, kind: DrKind) -> None:
        if not 0 <= slot < self.SLOTS:
            raise SlotOutOfRange(f"slot {slot} not in 0..{self.SLOTS - 1}")
        self.slots[slot] = DrSlot(vaddr & M32, kind, True)

    def clear(self, slot: int) -> None:
        if not 0 <= slot < self.SLOTS:
            raise SlotOutOfRange(f"slot {slot} not in 0..{self.SLOTS - 1}")
        self.slots[slot] = DrSlot()

    def clear_all(self) -> None:
        self.slots = [DrSlot() for _ in range(self.SLOTS)]

    def alloc(self, vaddr: int, kind: DrKind) -> int:
        """Enable the first free slot; a fifth distinct breakpoint fails."""
        for i, s in enumerate(self.slots):
            if not s.enabled:
                self.set(i, vaddr, kind)
                return i
        raise DrExhausted("all 4 debug registers are enabled")

    def enabled_count(self) -> int:
        return sum(1 for s in self.slots if s.enabled)

    def exec_hit(self, pc: int) -> bool:
        return any(s.enabled and s.kind is DrKind.EXEC and s.vaddr == pc
                   for s in self.slots)

    def data_hit(self, vaddr: int, width: int, kind: AccessKind) -> int | None:
        """Watched address covered by the access, or None."""
        for s in self.slots:
            if not s.enabled or s.kind is DrKind.EXEC:
                continue
            if kind is AccessKind.READ and s.kind is not DrKind.READWRITE:
                continue
            if vaddr <= s.vaddr < vaddr + width:
                return s.vaddr
        return None

    def read_slot(self, slot: int) -> int:
        """Value the guest observes: nonzero exactly when the slot is armed."""
        if not 0 <= slot < self.SLOTS:
            return 0
        s = self.slots[slot]
        if not s.enabled:
            return 0
        kind_code = {DrKind.EXEC: 1, DrKind.WRITE: 2, DrKind.READWRITE: 3}[s.kind]
        return (kind_code << 32) | s.vaddr


class Int3Manager:
    """Classic binary-modification breakpoints.

    The trap byte is written straight into the data frame, so the guest
    sees it when it reads its own code.  Clearing restores the saved byte
    unless the guest overwrote the location itself.
    """

    def __init__(self, kernel: KernelSim):
        self.kernel = kernel
        self.saved: dict[int, int] = {}

    def set(self, vaddr: int) -> None:
        vaddr &= M32
        if vaddr in self.saved:
            raise AlreadySet(f"int3 already set at {vaddr:#010x}")
        self.saved[vaddr] = self.kernel.debug_read(vaddr, 1)[0]
        self.kernel.debug_write(vaddr, bytes([INT3_BYTE]))

    def clear(self, vaddr: int) -> None:
        vaddr &= M32
        if vaddr not in self.saved:
            raise NotSet(f"no int3 at {vaddr:#010x}")
        orig = self.saved.pop(vaddr)
        if self.kernel.debug_read(vaddr, 1)[0] == INT3_BYTE:
            self.kernel.debug_write(vaddr, bytes([orig]))

    def armed(self, vaddr: int) -> bool:
        return (vaddr & M32) in self.saved

    def original_byte(self, vaddr: int) -> int:
        return self.saved[vaddr & M32]

    def restore_all(self) -> None:
        for vaddr in list(self.saved):
            self.clear(vaddr)


@dataclass
class _SplitPage:
    clean_frame: int
    exec_frame: int
    breakpoints: set[int]


class SplitView:
    """Separate execute view per instrumented page, with write eviction.

    Fetches are served from a hidden copy holding the trap bytes; reads and
    writes use the guest's own frame, so the guest never observes the traps.
    Any guest write to an instrumented page invokes the code-modification
    handler, which evicts every breakpoint on the page (the unified view is
    restored) and charges a synthetic context-switch penalty.
    """

    def __init__(self, kernel: KernelSim, eviction_cost: int = 1000):
        self.kernel = kernel
        self.eviction_cost = eviction_cost
        self.pages: dict[int, _SplitPage] = {}
        self.evictions: list[int] = []

    def instrument(self, page_vaddr: int, breakpoints: set[int]) -> None:
        vpage = (page_vaddr & M32) >> PAGE_SHIFT
        entry = self.kernel.entry_for(page_vaddr)
        if entry is None:
            raise NotSet(f"page {page_vaddr & ~OFFSET_MASK:#x} not mapped")
        for bp in breakpoints:
            if (bp & M32) >> PAGE_SHIFT != vpage:
                raise NotSet(f"breakpoint {bp:#x} not on page {page_vaddr:#x}")
        phys = self.kernel.mmu.phys
        exec_frame = self.kernel.allocator.alloc_frame()
        clean = entry.frame << PAGE_SHIFT
        shadow = bytearray(phys.read(clean, PAGE_SIZE))
        for bp in breakpoints:
            shadow[bp & OFFSET_MASK] = INT3_BYTE
        phys.write(exec_frame << PAGE_SHIFT, bytes(shadow))
        self.pages[vpage] = _SplitPage(entry.frame, exec_frame, {b & M32 for b in breakpoints})

    def add_breakpoint(self, vaddr: int) -> None:
        """Instrument the page of ``vaddr`` (if needed) and shadow the byte."""
        vpage = (vaddr & M32) >> PAGE_SHIFT
        page = self.pages.get(vpage)
        if page is None:
            self.instrument(vaddr & ~OFFSET_MASK, {vaddr & M32})
            return
        page.breakpoints.add(vaddr & M32)
        phys = self.kernel.mmu.phys
        phys.data[(page.exec_frame << PAGE_SHIFT) | (vaddr & OFFSET_MASK)] = INT3_BYTE

    def fetch_route(self, vpn: int, paddr: int) -> int:
        page = self.pages.get(vpn)
        if page is None or (paddr >> PAGE_SHIFT) != page.clean_frame:
            return paddr
        return (page.exec_frame << PAGE_SHIFT) | (paddr & OFFSET_MASK)

    def note_write(self, vaddr: int, width: int) -> DebugEvent | None:
        """Code-modification handler: evict on the first write to a page."""
        first = (vaddr & M32) >> PAGE_SHIFT
        last = ((vaddr + width - 1) & M32) >> PAGE_SHIFT
        for vpn in range(first, last + 1):
            page = self.pages.pop(vpn, None)
            if page is None:
                continue
            self.kernel.allocator.free_frame(page.exec_frame)
            self.evictions.append(vpn)
            counters = self.kernel.mmu.counters
            counters.synthetic_cycles += self.eviction_cost
            return DebugEvent(EventKind.EVICTION, vaddr=vpn << PAGE_SHIFT)
        return None

    def armed(self, vaddr: int) -> bool:
        page = self.pages.get((vaddr & M32) >> PAGE_SHIFT)
        return page is not None and (vaddr & M32) in page.breakpoints

    def unshadow(self, vaddr: int) -> None:
        """Temporarily restore the original byte in the execute view."""
        page = self.pages[(vaddr & M32) >> PAGE_SHIFT]
        phys = self.kernel.mmu.phys
        orig = phys.data[(page.clean_frame << PAGE_SHIFT) | (vaddr & OFFSET_MASK)]
        phys.data[(page.exec_frame << PAGE_SHIFT) | (vaddr & OFFSET_MASK)] = orig

    def reshadow(self, vaddr: int) -> None:
        page = self.pages.get((vaddr & M32) >> PAGE_SHIFT)
        if page is not None and (vaddr & M32) in page.breakpoints:
            phys = self.kernel.mmu.phys
            phys.data[(page.exec_frame << PAGE_SHIFT) | (vaddr & OFFSET_MASK)] = INT3_BYTE

    def release_all(self) -> None:
        for page in self.pages.values():
            self.kernel.allocator.free_frame(page.exec_frame)
        self.pages.clear()
