"""Paging MMU with a breakpoint bit in every PTE and buddy-frame flag checks.

Virtual addresses are 32-bit with a 10/10/12 two-level walk over tables
stored in simulated physical memory.  Each leaf entry carries, besides the
usual present/writable/executable bits, a BREAKPOINT bit: when set, every
access to the page triggers a per-byte flag lookup in the physically
adjacent buddy frame (data frame base + page size).  The TLB caches the
breakpoint bit alongside the translation, so PTE edits require an explicit
flush to take effect.

Flag byte layout (one byte in the buddy frame per data byte):

    bit0 R      trap on read
    bit1 W      trap on write
    bit2 X      trap on execute (first byte of an executed instruction)
    bit3 FETCH  trap on instruction fetch (any byte of the instruction)
    bit4 HOOK   dispatch to a registered handler, execution continues
    bit5 TAINT  marks externally injected data; propagated by the core
    bits 6-7    reserved, must be zero through the public API
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from enum import Enum, IntEnum

from .isa import LENGTH_BY_BYTE

__all__ = [
    "PAGE_SIZE", "PAGE_SHIFT", "AccessKind", "PageFault", "PageFaultReason",
    "BP_R", "BP_W", "BP_X", "BP_FETCH", "BP_HOOK", "BP_TAINT",
    "BP_VALID_MASK", "BP_RESERVED_MASK", "flags_to_str", "parse_flags",
    "PTE_PRESENT", "PTE_WRITABLE", "PTE_EXECUTABLE", "PTE_BREAKPOINT",
    "PTE_BUDDY_MARKER", "pte_pack", "pte_frame",
    "PerfCounters", "PhysicalMemory", "Tlb", "Mmu", "AccessPlan",
    "BuddyChecker", "buddy_addr",
]

PAGE_SIZE = 4096
PAGE_SHIFT = 12
OFFSET_MASK = PAGE_SIZE - 1
M32 = 0xFFFF_FFFF

# Breakpoint flag byte bits.
BP_R = 0x01
BP_W = 0x02
BP_X = 0x04
BP_FETCH = 0x08
BP_HOOK = 0x10
BP_TAINT = 0x20
BP_VALID_MASK = 0x3F
BP_RESERVED_MASK = 0xC0

_FLAG_LETTERS = [(BP_R, "r"), (BP_W, "w"), (BP_X, "x"), (BP_FETCH, "f"),
                 (BP_HOOK, "h"), (BP_TAINT, "t")]
_LETTER_TO_FLAG = {letter: bit for bit, letter in _FLAG_LETTERS}

# Page table entry bits; bits 12-31 hold the physical frame number.
PTE_PRESENT = 1 << 0
PTE_WRITABLE = 1 << 1
PTE_EXECUTABLE = 1 << 2
PTE_BREAKPOINT = 1 << 3
PTE_BUDDY_MARKER = 1 << 4
PTE_FRAME_MASK = 0xFFFF_F000


def flags_to_str(flags: int) -> str:
    return "".join(letter for bit, letter in _FLAG_LETTERS if flags & bit) or "-"


def parse_flags(text: str) -> int:
    """Parse flags given as letters (``xw``) or a numeric literal."""
    text = text.strip().lower()
    if not text or text == "-":
        return 0
    val = None
    try:
        val = int(text, 0)
    except ValueError:
        pass
    if val is not None:
        return val
    flags = 0
    for ch in text:
        bit = _LETTER_TO_FLAG.get(ch)
        if bit is None:
            raise ValueError(f"unknown flag letter {ch!r}")
        flags |= bit
    return flags


def pte_pack(frame: int, *, present: bool = True, writable: bool = False,
             executable: bool = False, breakpoint: bool = False,
             buddy_marker: bool = False) -> int:
    if breakpoint and buddy_marker:
        raise ValueError("BREAKPOINT and BUDDY_MARKER are mutually exclusive")
    if breakpoint and not present:
        raise ValueError("BREAKPOINT requires PRESENT")
    val = (frame << PAGE_SHIFT) & PTE_FRAME_MASK
    if present:
        val |= PTE_PRESENT
    if writable:
        val |= PTE_WRITABLE
    if executable:
        val |= PTE_EXECUTABLE
    if breakpoint:
        val |= PTE_BREAKPOINT
    if buddy_marker:
        val |= PTE_BUDDY_MARKER
    return val


def pte_frame(pte: int) -> int:
    return (pte & PTE_FRAME_MASK) >> PAGE_SHIFT


def buddy_addr(frame_base: int) -> int:
    """Physical address of the buddy frame for a page-aligned data frame."""
    if frame_base & OFFSET_MASK:
        raise ValueError(f"{frame_base:#x} is not page aligned")
    return frame_base + PAGE_SIZE


class AccessKind(IntEnum):
    READ = 0
    WRITE = 1
    EXECUTE = 2   # first byte of an executed instruction
    FETCH = 3     # any byte of an executed instruction

    def __str__(self) -> str:  # stable names for logs and the wire
        return _ACCESS_NAMES[self]


_ACCESS_NAMES = {AccessKind.READ: "Read", AccessKind.WRITE: "Write",
                 AccessKind.EXECUTE: "Execute", AccessKind.FETCH: "Fetch"}

# Flag bits that block a given access kind.  EXECUTE also matches FETCH
# because the first byte of an instruction counts as fetched too.
_MATCH = {
    AccessKind.READ: BP_R,
    AccessKind.WRITE: BP_W,
    AccessKind.EXECUTE: BP_X | BP_FETCH,
    AccessKind.FETCH: BP_FETCH,
}


class PageFaultReason(str, Enum):
    NOT_PRESENT = "NotPresent"
    WRITE_PROTECTED = "WriteProtected"
    NO_EXEC = "NoExec"


class PageFault(Exception):
    def __init__(self, vaddr: int, reason: PageFaultReason):
        super().__init__(f"page fault at {vaddr:#010x}: {reason.value}")
        self.vaddr = vaddr
        self.reason = reason


@dataclass
class PerfCounters:
    """Monotone event counters shared by the MMU, core, and debugger."""

    instructions_retired: int = 0
    data_refs: int = 0
    fetch_refs: int = 0
    buddy_refs: int = 0
    tlb_hits: int = 0
    tlb_misses: int = 0
    pt_walks: int = 0
    debug_exits: int = 0
    synthetic_cycles: int = 0
    taint_dropped: int = 0
    cow_faults: int = 0

    def as_dict(self) -> dict[str, int]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


class PhysicalMemory:
    """Flat byte-addressed physical memory."""

    def __init__(self, size: int = 16 * 1024 * 1024):
        if size % PAGE_SIZE:
            raise ValueError("size must be a multiple of the page size")
        self.size = size
        self.frames = size // PAGE_SIZE
        self.data = bytearray(size)

    def read_u64(self, paddr: int) -> int:
        return int.from_bytes(self.data[paddr:paddr + 8], "little")

    def write_u64(self, paddr: int, value: int) -> None:
        self.data[paddr:paddr + 8] = value.to_bytes(8, "little")

    def read(self, paddr: int, length: int) -> bytes:
        if paddr < 0 or paddr + length > self.size:
            raise IndexError(f"physical access [{paddr:#x}+{length}] out of bounds")
        return bytes(self.data[paddr:paddr + length])

    def write(self, paddr: int, blob: bytes) -> None:
        if paddr < 0 or paddr + len(blob) > self.size:
            raise IndexError(f"physical access [{paddr:#x}+{len(blob)}] out of bounds")
        self.data[paddr:paddr + len(blob)] = blob

    def dump(self) -> bytes:
        return bytes(self.data)

    def load(self, blob: bytes) -> None:
        if len(blob) != self.size:
            raise ValueError("image size mismatch")
        self.data[:] = blob


class Tlb:
    """Fixed-capacity fully associative TLB with FIFO replacement.

    Entries cache (pfn, writable, executable, breakpoint-bit) per virtual
    page number; insertion order of the backing dict provides FIFO.
    """

    def __init__(self, capacity: int = 16):
        self.capacity = capacity
        self.entries: dict[int, tuple[int, bool, bool, bool]] = {}

    def lookup(self, vpn: int):
        return self.entries.get(vpn)

    def fill(self, vpn: int, pfn: int, writable: bool, executable: bool, bp: bool) -> None:
        if vpn in self.entries:
            del self.entries[vpn]
        elif len(self.entries) >= self.capacity:
            del self.entries[next(iter(self.entries))]
        self.entries[vpn] = (pfn, writable, executable, bp)

    def flush_page(self, vpn: int) -> None:
        self.entries.pop(vpn, None)

    def flush_all(self) -> None:
        self.entries.clear()

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class AccessPlan:
    """Result of checking one guest access before performing it.

    ``runs`` lists contiguous (io_paddr, length) spans for the actual data
    transfer, ``hooks`` the (vaddr, flags, kind) of HOOK bytes encountered
    in ascending address order, and ``trap`` the first blocking byte as
    (vaddr, flags, kind), if any.  ``taint_or`` is the OR of TAINT bits
    over all checked bytes; ``byte_info`` (paddr, bp) pairs are filled only
    when requested for taint stores.
    """

    runs: list[tuple[int, int]] = field(default_factory=list)
    hooks: list[tuple[int, int, AccessKind]] = field(default_factory=list)
    trap: tuple[int, int, AccessKind] | None = None
    taint_or: bool = False
    byte_info: list[tuple[int, bool]] | None = None


class BuddyChecker:
    """Hardware-path flag source: reads the buddy frame next to the data frame.

    Only consulted for pages whose PTE carries the BREAKPOINT bit, so the
    +PAGE_SIZE neighbour is a registered buddy frame by construction.  An
    optional mirror receives taint updates so an external shadow map can be
    kept in lockstep with the frames.
    """

    check_all = False

    def __init__(self, phys: PhysicalMemory, mirror=None):
        self.phys = phys
        self.mirror = mirror

    def flags_at(self, paddr: int) -> int:
        return self.phys.data[paddr + PAGE_SIZE]

    def write_taint(self, paddr: int, tainted: bool, bp_page: bool) -> bool:
        """Returns True if the bit was stored, False if dropped."""
        if not bp_page:
            return False
        b = paddr + PAGE_SIZE
        old = self.phys.data[b]
        self.phys.data[b] = (old | BP_TAINT) if tainted else (old & ~BP_TAINT)
        if self.mirror is not None:
            self.mirror.write_taint(paddr, tainted, bp_page)
        return True


class Mmu:
    """Two-level translation plus the per-byte breakpoint check."""

    def __init__(self, phys_size: int = 16 * 1024 * 1024, tlb_capacity: int = 16,
                 tlb_enabled: bool = True, counters: PerfCounters | None = None):
        self.phys = PhysicalMemory(phys_size)
        self.tlb = Tlb(tlb_capacity)
        self.tlb_enabled = tlb_enabled
        self.counters = counters if counters is not None else PerfCounters()
        self.root: int | None = None
        self.buddy_ref_cost = 1  # synthetic cycles per buddy lookup

    # -- configuration ----------------------------------------------------

    def set_root(self, root_paddr: int) -> None:
        self.root = root_paddr
        self.tlb.flush_all()

    def flush_tlb(self, vaddr: int | None = None) -> None:
        """Flush the whole TLB, or just the page containing ``vaddr``."""
        if vaddr is None:
            self.tlb.flush_all()
        else:
            self.tlb.flush_page((vaddr & M32) >> PAGE_SHIFT)

    # -- translation ------------------------------------------------------

    def _walk(self, va: int) -> int:
        """Read the leaf PTE for ``va`` from the live tables."""
        if self.root is None:
            raise PageFault(va, PageFaultReason.NOT_PRESENT)
        self.counters.pt_walks += 1
        pde = self.phys.read_u64(self.root + (va >> 22) * 8)
        if not pde & PTE_PRESENT:
            raise PageFault(va, PageFaultReason.NOT_PRESENT)
        pt_base = pde & PTE_FRAME_MASK
        return self.phys.read_u64(pt_base + ((va >> PAGE_SHIFT) & 0x3FF) * 8)

    def translate(self, vaddr: int, kind: AccessKind) -> tuple[int, bool]:
        """Translate one byte address; returns (paddr, breakpoint_bit).

        Counts a TLB hit or a miss-plus-walk, fills the TLB only on a
        successful permission check, and raises PageFault otherwise.
        """
        va = vaddr & M32
        vpn = va >> PAGE_SHIFT
        c = self.counters
        entry = self.tlb.lookup(vpn) if self.tlb_enabled else None
        if entry is not None:
            c.tlb_hits += 1
            pfn, writable, executable, bp = entry
        else:
            if self.tlb_enabled:
                c.tlb_misses += 1
            pte = self._walk(va)
            if not pte & PTE_PRESENT:
                raise PageFault(va, PageFaultReason.NOT_PRESENT)
            pfn = pte_frame(pte)
            writable = bool(pte & PTE_WRITABLE)
            executable = bool(pte & PTE_EXECUTABLE)
            bp = bool(pte & PTE_BREAKPOINT)
        if kind == AccessKind.WRITE and not writable:
            raise PageFault(va, PageFaultReason.WRITE_PROTECTED)
        if kind >= AccessKind.EXECUTE and not executable:
            raise PageFault(va, PageFaultReason.NO_EXEC)
        if entry is None and self.tlb_enabled:
            self.tlb.fill(vpn, pfn, writable, executable, bp)
        return (pfn << PAGE_SHIFT) | (va & OFFSET_MASK), bp

    def probe(self, vaddr: int) -> int | None:
        """Leaf PTE value for debugger inspection; no counters, no faults."""
        try:
            saved = self.counters.pt_walks
            pte = self._walk(vaddr & M32)
            self.counters.pt_walks = saved
            return pte
        except PageFault:
            return None

    # -- checked accesses -------------------------------------------------

    def _scan_bytes(self, va: int, paddr: int, count: int, kind: AccessKind,
                    suppressions, checker, plan: AccessPlan) -> bool:
        """Flag-check ``count`` bytes in ascending order; True on trap."""
        match = _MATCH[kind]
        for i in range(count):
            fl = checker.flags_at(paddr + i)
            if not fl:
                continue
            bva = (va + i) & M32
            if fl & BP_HOOK:
                plan.hooks.append((bva, fl, kind))
            if fl & BP_TAINT:
                plan.taint_or = True
            if fl & match and (bva, kind) not in suppressions:
                plan.trap = (bva, fl, kind)
                return True
        return False

    def data_access(self, vaddr: int, width: int, kind: AccessKind,
                    suppressions, checker, want_bytes: bool = False) -> AccessPlan:
        """Translate and flag-check a data access of ``width`` bytes.

        Counts one data reference per page touched and one buddy reference
        per breakpointed page touched.  No memory is transferred here; the
        caller performs the IO over ``plan.runs`` only when the plan is
        clear of traps.
        """
        plan = AccessPlan(byte_info=[] if want_bytes else None)
        c = self.counters
        va = vaddr & M32
        left = width
        while left > 0:
            chunk = min(left, PAGE_SIZE - (va & OFFSET_MASK))
            paddr, bp = self.translate(va, kind)
            c.data_refs += 1
            if bp:
                c.buddy_refs += 1
                c.synthetic_cycles += self.buddy_ref_cost
            if plan.byte_info is not None:
                plan.byte_info.extend((paddr + i, bp) for i in range(chunk))
            if (bp or checker.check_all) and plan.trap is None:
                if self._scan_bytes(va, paddr, chunk, kind, suppressions, checker, plan):
                    return plan
            plan.runs.append((paddr, chunk))
            va = (va + chunk) & M32
            left -= chunk
        return plan

    def fetch_instruction(self, pc: int, suppressions, checker,
                          fetch_router=None) -> tuple[bytes, AccessPlan]:
        """Fetch one instruction with breakpoint checks.

        The first byte is checked as EXECUTE (matching both X and FETCH
        flags), the remaining bytes as FETCH.  The whole instruction counts
        as a single fetch access: one fetch reference and at most one buddy
        reference per page it touches.  Returns the raw bytes (empty when
        trapped) and the plan.
        """
        plan = AccessPlan()
        c = self.counters
        phys = self.phys
        va = pc & M32
        paddr, bp = self.translate(va, AccessKind.EXECUTE)
        c.fetch_refs += 1
        if bp:
            c.buddy_refs += 1
            c.synthetic_cycles += self.buddy_ref_cost
        if bp or checker.check_all:
            if self._scan_bytes(va, paddr, 1, AccessKind.EXECUTE, suppressions, checker, plan):
                return b"", plan
        io0 = fetch_router(va >> PAGE_SHIFT, paddr) if fetch_router else paddr
        length = LENGTH_BY_BYTE[phys.data[io0]]
        plan.runs.append((io0, 1))
        pages_seen = {va >> PAGE_SHIFT}
        off = 1
        while off < length:
            bva = (va + off) & M32
            chunk = min(length - off, PAGE_SIZE - (bva & OFFSET_MASK))
            paddr, bp = self.translate(bva, AccessKind.FETCH)
            vpn = bva >> PAGE_SHIFT
            if vpn not in pages_seen:
                pages_seen.add(vpn)
                c.fetch_refs += 1
                if bp:
                    c.buddy_refs += 1
                    c.synthetic_cycles += self.buddy_ref_cost
            if (bp or checker.check_all) and plan.trap is None:
                if self._scan_bytes(bva, paddr, chunk, AccessKind.FETCH, suppressions, checker, plan):
                    return b"", plan
            io = fetch_router(vpn, paddr) if fetch_router else paddr
            plan.runs.append((io, chunk))
            off += chunk
        raw = b"".join(phys.read(p, n) for p, n in plan.runs)
        return raw, plan

    # -- debugger-path raw access (no checks, no counters) ----------------

    def debug_translate(self, vaddr: int) -> int | None:
        pte = self.probe(vaddr)
        if pte is None or not pte & PTE_PRESENT:
            return None
        return (pte & PTE_FRAME_MASK) | (vaddr & OFFSET_MASK)
