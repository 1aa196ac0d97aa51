"""Simulated OS layer: frame allocation, mappings, breakpoint API, swap, COW.

The kernel owns physical frames and page tables.  Breakpoint-capable pages
are backed by a *buddy pair*: two physically contiguous frames, the data
frame followed by its flag frame.  The public breakpoint API reads and
writes flag bytes at byte-for-byte parity with the data frame; an optional
listener receives a notification for every flag mutation so an external
shadow map can mirror kernel state exactly.

Buddy frames are never mapped into the guest address space: guest code can
only ever name data bytes, the debugger alone reaches flag bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .image import GuestImage
from .mmu import (
    BP_RESERVED_MASK, BP_TAINT, M32, Mmu, OFFSET_MASK, PAGE_SHIFT, PAGE_SIZE,
    PTE_PRESENT, pte_pack,
)

__all__ = [
    "KernelError", "OutOfMemory", "OutOfContiguousMemory", "NoBuddyFrame",
    "ReservedBitsSet", "BuddyPinned", "NoAdjacentPairOnSwapIn", "NotSwapped",
    "MappingError", "SwapPolicy", "CowPolicy", "FrameAllocator",
    "AddressSpace", "MapEntry", "KernelSim",
]


class KernelError(Exception):
    pass


class OutOfMemory(KernelError):
    pass


class OutOfContiguousMemory(KernelError):
    pass


class NoBuddyFrame(KernelError):
    pass


class ReservedBitsSet(KernelError):
    pass


class BuddyPinned(KernelError):
    pass


class NoAdjacentPairOnSwapIn(KernelError):
    pass


class NotSwapped(KernelError):
    pass


class MappingError(KernelError):
    pass


class SwapPolicy(Enum):
    PIN_PAIR = "pin_pair"
    EVICT_TOGETHER = "evict_together"


class CowPolicy(Enum):
    INHERIT_BUDDY = "inherit_buddy"
    LEAVE_BEHIND = "leave_behind"


class FrameAllocator:
    """First-fit bitmap allocator with a registry of buddy pairs."""

    def __init__(self, total_frames: int):
        self.total = total_frames
        self.used = bytearray(total_frames)
        self.pairs: dict[int, int] = {}       # data frame -> flag frame
        self.pair_member: dict[int, int] = {}  # either member -> data frame

    def alloc_frame(self) -> int:
        for f in range(self.total):
            if not self.used[f]:
                self.used[f] = 1
                return f
        raise OutOfMemory("no free frames")

    def alloc_pair(self) -> tuple[int, int]:
        """First adjacent free pair; the data frame is never the last frame."""
        for f in range(self.total - 1):
            if not self.used[f] and not self.used[f + 1]:
                self.used[f] = self.used[f + 1] = 1
                self.register_pair(f, f + 1)
                return f, f + 1
        raise OutOfContiguousMemory("no adjacent free frame pair")

    def claim(self, frame: int) -> None:
        if self.used[frame]:
            raise MappingError(f"frame {frame} already in use")
        self.used[frame] = 1

    def register_pair(self, data: int, flag: int) -> None:
        if flag != data + 1:
            raise MappingError("buddy frames must be physically contiguous")
        self.pairs[data] = flag
        self.pair_member[data] = data
        self.pair_member[flag] = data

    def unregister_pair(self, data: int) -> None:
        flag = self.pairs.pop(data)
        del self.pair_member[data]
        del self.pair_member[flag]

    def free_frame(self, frame: int) -> None:
        if frame in self.pair_member:
            raise MappingError(f"frame {frame} belongs to a buddy pair")
        self.used[frame] = 0

    def free_pair(self, data: int) -> None:
        flag = self.pairs[data]
        self.unregister_pair(data)
        self.used[data] = 0
        self.used[flag] = 0

    @property
    def frames_used(self) -> int:
        return sum(self.used)


@dataclass
class MapEntry:
    frame: int
    writable: bool
    executable: bool
    breakpoint: bool = False
    buddy_marker: bool = False


@dataclass
class AddressSpace:
    """One guest view: a page directory plus a mirror of its leaf entries."""

    name: str
    root: int
    mappings: dict[int, MapEntry] = field(default_factory=dict)
    page_tables: dict[int, int] = field(default_factory=dict)  # pde index -> table base
    cow_pending: dict[int, CowPolicy] = field(default_factory=dict)


@dataclass(frozen=True)
class _SwapEntry:
    data: bytes
    flags: bytes | None                 # buddy frame contents for pairs
    maps: tuple[tuple[str, int, bool, bool], ...]  # (space, vpage, writable, executable)
    breakpoint: bool


class KernelSim:
    """Kernel-side mechanics behind the breakpoint machinery."""

    # Page directories and page tables hold 1024 eight-byte entries each,
    # so every table occupies two contiguous frames.
    TABLE_FRAMES = 2

    def __init__(self, mmu: Mmu, swap_policy: SwapPolicy = SwapPolicy.PIN_PAIR,
                 auto_attach: bool = False):
        self.mmu = mmu
        self.swap_policy = swap_policy
        self.auto_attach = auto_attach
        self.allocator = FrameAllocator(mmu.phys.frames)
        self.swap_store: dict[int, _SwapEntry] = {}
        self.spaces: dict[str, AddressSpace] = {}
        self._listeners: list = []
        self.current = self.create_space("init")
        self.activate(self.current)

    # -- listeners (shadow-map mirroring) ----------------------------------

    def add_bp_listener(self, fn) -> None:
        self._listeners.append(fn)

    def _notify(self, *event) -> None:
        for fn in self._listeners:
            fn(event)

    # -- spaces and mappings ------------------------------------------------

    def _alloc_table(self) -> int:
        for f in range(self.allocator.total - 1):
            if not self.allocator.used[f] and not self.allocator.used[f + 1]:
                self.allocator.used[f] = self.allocator.used[f + 1] = 1
                base = f << PAGE_SHIFT
                self.mmu.phys.write(base, bytes(self.TABLE_FRAMES * PAGE_SIZE))
                return base
        raise OutOfContiguousMemory("no room for a page table")

    def create_space(self, name: str) -> AddressSpace:
        if name in self.spaces:
            raise MappingError(f"address space {name!r} already exists")
        space = AddressSpace(name=name, root=self._alloc_table())
        self.spaces[name] = space
        return space

    def activate(self, space: AddressSpace) -> None:
        self.current = space
        self.mmu.set_root(space.root)

    def _pte_addr(self, space: AddressSpace, vpage: int) -> int:
        pde_index = vpage >> 10
        table = space.page_tables.get(pde_index)
        if table is None:
            table = self._alloc_table()
            space.page_tables[pde_index] = table
            self.mmu.phys.write_u64(space.root + pde_index * 8,
                                    pte_pack(table >> PAGE_SHIFT, present=True))
        return table + (vpage & 0x3FF) * 8

    def _write_pte(self, space: AddressSpace, vpage: int, entry: MapEntry | None) -> None:
        addr = self._pte_addr(space, vpage)
        if entry is None:
            self.mmu.phys.write_u64(addr, 0)
            space.mappings.pop(vpage, None)
        else:
            self.mmu.phys.write_u64(addr, pte_pack(
                entry.frame, present=True, writable=entry.writable,
                executable=entry.executable, breakpoint=entry.breakpoint,
                buddy_marker=entry.buddy_marker))
            space.mappings[vpage] = entry
        if space is self.current:
            self.mmu.flush_tlb(vpage << PAGE_SHIFT)

    def map_page(self, vaddr: int, *, frame: int | None = None, writable: bool = True,
                 executable: bool = False, breakpoint: bool = False,
                 space: AddressSpace | None = None) -> int:
        """Map one page; allocates a zeroed frame when none is given."""
        space = space or self.current
        vpage = (vaddr & M32) >> PAGE_SHIFT
        if vpage in space.mappings:
            raise MappingError(f"page {vpage << PAGE_SHIFT:#x} already mapped")
        self._pte_addr(space, vpage)  # table first, so data frames stay adjacent
        if frame is None:
            frame = self.allocator.alloc_frame()
            self.mmu.phys.write(frame << PAGE_SHIFT, bytes(PAGE_SIZE))
        self._write_pte(space, vpage, MapEntry(frame, writable, executable, breakpoint))
        return frame

    def unmap_page(self, vaddr: int, space: AddressSpace | None = None) -> None:
        space = space or self.current
        self._write_pte(space, (vaddr & M32) >> PAGE_SHIFT, None)

    def entry_for(self, vaddr: int, space: AddressSpace | None = None) -> MapEntry | None:
        space = space or self.current
        return space.mappings.get((vaddr & M32) >> PAGE_SHIFT)

    def mapping_matches_ptes(self, space: AddressSpace | None = None) -> bool:
        """True when the mirror table agrees with the live page tables."""
        space = space or self.current
        for vpage, e in space.mappings.items():
            pde = self.mmu.phys.read_u64(space.root + (vpage >> 10) * 8)
            if not pde & PTE_PRESENT:
                return False
            table = pde & ~OFFSET_MASK
            pte = self.mmu.phys.read_u64(table + (vpage & 0x3FF) * 8)
            expect = pte_pack(e.frame, present=True, writable=e.writable,
                              executable=e.executable, breakpoint=e.breakpoint,
                              buddy_marker=e.buddy_marker)
            if pte != expect:
                return False
        return True

    # -- debugger-path raw memory ------------------------------------------

    def debug_read(self, vaddr: int, length: int, space: AddressSpace | None = None) -> bytes:
        space = space or self.current
        out = bytearray()
        va = vaddr & M32
        while length > 0:
            e = space.mappings.get(va >> PAGE_SHIFT)
            if e is None:
                raise MappingError(f"page {va & ~OFFSET_MASK:#x} not mapped")
            chunk = min(length, PAGE_SIZE - (va & OFFSET_MASK))
            out += self.mmu.phys.read((e.frame << PAGE_SHIFT) | (va & OFFSET_MASK), chunk)
            va = (va + chunk) & M32
            length -= chunk
        return bytes(out)

    def debug_write(self, vaddr: int, blob: bytes, space: AddressSpace | None = None) -> None:
        space = space or self.current
        va = vaddr & M32
        off = 0
        while off < len(blob):
            e = space.mappings.get(va >> PAGE_SHIFT)
            if e is None:
                raise MappingError(f"page {va & ~OFFSET_MASK:#x} not mapped")
            chunk = min(len(blob) - off, PAGE_SIZE - (va & OFFSET_MASK))
            self.mmu.phys.write((e.frame << PAGE_SHIFT) | (va & OFFSET_MASK), blob[off:off + chunk])
            va = (va + chunk) & M32
            off += chunk

    # -- buddy allocation and the breakpoint API -----------------------------

    def alloc_buddy_pair(self) -> tuple[int, int]:
        """Allocate two adjacent frames; the flag frame starts zeroed."""
        data, flag = self.allocator.alloc_pair()
        self.mmu.phys.write(flag << PAGE_SHIFT, bytes(PAGE_SIZE))
        return data, flag

    def attach_buddy(self, vaddr: int, space: AddressSpace | None = None) -> None:
        """Give the page of ``vaddr`` a flag frame, preserving its contents.

        Claims the physically adjacent frame when it is free; otherwise the
        data is copied into a fresh pair and the page remapped.  Idempotent
        on pages that already carry the breakpoint bit.
        """
        space = space or self.current
        vpage = (vaddr & M32) >> PAGE_SHIFT
        e = space.mappings.get(vpage)
        if e is None:
            raise NoBuddyFrame(f"page {vpage << PAGE_SHIFT:#x} not mapped")
        if e.breakpoint:
            return
        alloc = self.allocator
        f = e.frame
        if f + 1 < alloc.total and not alloc.used[f + 1] and f not in alloc.pair_member:
            alloc.claim(f + 1)
            alloc.register_pair(f, f + 1)
            self.mmu.phys.write((f + 1) << PAGE_SHIFT, bytes(PAGE_SIZE))
            self._write_pte(space, vpage, MapEntry(f, e.writable, e.executable, True))
            return
        data, _flag = self.alloc_buddy_pair()
        self.mmu.phys.write(data << PAGE_SHIFT,
                            self.mmu.phys.read(f << PAGE_SHIFT, PAGE_SIZE))
        self._write_pte(space, vpage, MapEntry(data, e.writable, e.executable, True))
        self._release_data_frame(f, space)

    def _release_data_frame(self, frame: int, space: AddressSpace) -> None:
        """Free a frame unless some other mapping still uses it."""
        for sp in self.spaces.values():
            for e in sp.mappings.values():
                if e.frame == frame:
                    return
        self.allocator.free_frame(frame)

    def _flag_addr(self, vaddr: int, space: AddressSpace | None = None,
                   attach: bool | None = None) -> tuple[int, int]:
        """(data paddr, flag paddr) for one byte; attaches when configured."""
        space = space or self.current
        vpage = (vaddr & M32) >> PAGE_SHIFT
        e = space.mappings.get(vpage)
        if e is None:
            raise NoBuddyFrame(f"page {vpage << PAGE_SHIFT:#x} not mapped")
        if not e.breakpoint:
            if attach if attach is not None else self.auto_attach:
                self.attach_buddy(vaddr, space)
                e = space.mappings[vpage]
            else:
                raise NoBuddyFrame(f"page {vpage << PAGE_SHIFT:#x} has no buddy frame")
        data = (e.frame << PAGE_SHIFT) | (vaddr & OFFSET_MASK)
        return data, data + PAGE_SIZE

    def set_vbp(self, vaddr: int, flags: int, space: AddressSpace | None = None) -> None:
        if flags & BP_RESERVED_MASK:
            raise ReservedBitsSet(f"flags {flags:#04x} set reserved bits")
        data, flag = self._flag_addr(vaddr, space)
        self.mmu.phys.data[flag] = flags
        self._notify("set", data, flags)

    def clear_vbp(self, vaddr: int, space: AddressSpace | None = None) -> None:
        data, flag = self._flag_addr(vaddr, space)
        self.mmu.phys.data[flag] = 0
        self._notify("set", data, 0)

    def read_vbp(self, vaddr: int, space: AddressSpace | None = None) -> int:
        _, flag = self._flag_addr(vaddr, space, attach=False)
        return self.mmu.phys.data[flag]

    def set_vbp_page(self, vaddr: int, flags: int, space: AddressSpace | None = None) -> None:
        """Set the flag byte of every byte on the page of ``vaddr``."""
        if flags & BP_RESERVED_MASK:
            raise ReservedBitsSet(f"flags {flags:#04x} set reserved bits")
        data, flag = self._flag_addr(vaddr & ~OFFSET_MASK, space)
        self.mmu.phys.write(flag, bytes([flags]) * PAGE_SIZE)
        self._notify("fill", data >> PAGE_SHIFT, flags)

    def or_taint(self, vaddr: int, space: AddressSpace | None = None) -> None:
        data, flag = self._flag_addr(vaddr, space)
        self.mmu.phys.data[flag] |= BP_TAINT
        self._notify("set", data, self.mmu.phys.data[flag])

    # -- swapping -------------------------------------------------------------

    def _mappings_of_frame(self, frame: int):
        for sp in self.spaces.values():
            for vpage, e in sp.mappings.items():
                if e.frame == frame:
                    yield sp, vpage, e

    def swap_out(self, frame: int) -> None:
        """Move a frame (or, under EVICT_TOGETHER, its whole pair) to swap."""
        alloc = self.allocator
        phys = self.mmu.phys
        if frame in alloc.pair_member:
            if self.swap_policy is SwapPolicy.PIN_PAIR:
                raise BuddyPinned(f"frame {frame} is half of a resident buddy pair")
            data = alloc.pair_member[frame]
            flag = alloc.pairs[data]
            maps = tuple((sp.name, vpage, e.writable, e.executable)
                         for sp, vpage, e in self._mappings_of_frame(data))
            self.swap_store[data] = _SwapEntry(
                data=phys.read(data << PAGE_SHIFT, PAGE_SIZE),
                flags=phys.read(flag << PAGE_SHIFT, PAGE_SIZE),
                maps=maps, breakpoint=True)
            for sp, vpage, _ in list(self._mappings_of_frame(data)):
                self._write_pte(sp, vpage, None)
            alloc.free_pair(data)
            self._notify("drop_frame", data)
            return
        if frame not in self.swap_store and not alloc.used[frame]:
            raise MappingError(f"frame {frame} is not resident")
        maps = tuple((sp.name, vpage, e.writable, e.executable)
                     for sp, vpage, e in self._mappings_of_frame(frame))
        self.swap_store[frame] = _SwapEntry(
            data=phys.read(frame << PAGE_SHIFT, PAGE_SIZE),
            flags=None, maps=maps, breakpoint=False)
        for sp, vpage, _ in list(self._mappings_of_frame(frame)):
            self._write_pte(sp, vpage, None)
        alloc.free_frame(frame)

    def swap_in(self, frame: int) -> int:
        """Restore a swapped frame; returns the (possibly new) data frame."""
        entry = self.swap_store.pop(frame, None)
        if entry is None:
            raise NotSwapped(f"frame {frame} is not in the swap store")
        phys = self.mmu.phys
        if entry.breakpoint:
            try:
                data, flag = self.alloc_buddy_pair()
            except OutOfContiguousMemory as exc:
                self.swap_store[frame] = entry
                raise NoAdjacentPairOnSwapIn(str(exc)) from exc
            phys.write(data << PAGE_SHIFT, entry.data)
            phys.write(flag << PAGE_SHIFT, entry.flags)
            self._notify("restore_frame", data, entry.flags)
        else:
            data = self.allocator.alloc_frame()
            phys.write(data << PAGE_SHIFT, entry.data)
        for name, vpage, writable, executable in entry.maps:
            self._write_pte(self.spaces[name], vpage,
                            MapEntry(data, writable, executable, entry.breakpoint))
        return data

    # -- copy-on-write ----------------------------------------------------------

    def cow_fork_page(self, vaddr: int, policy: CowPolicy,
                      name: str | None = None) -> AddressSpace:
        """Clone the current space, marking the page of ``vaddr`` copy-on-write.

        Both views share the original frame pair until the child first
        writes the page; resolution then follows ``policy``.  The parent
        keeps its direct mapping (per-page model, no full process fork).
        """
        parent = self.current
        vpage = (vaddr & M32) >> PAGE_SHIFT
        e = parent.mappings.get(vpage)
        if e is None or not e.breakpoint:
            raise NoBuddyFrame(f"page {vpage << PAGE_SHIFT:#x} is not breakpoint-backed")
        child = self.create_space(name or f"{parent.name}+cow{len(self.spaces)}")
        for vp, pe in parent.mappings.items():
            writable = pe.writable and vp != vpage
            self._write_pte(child, vp, MapEntry(pe.frame, writable, pe.executable, pe.breakpoint))
        child.cow_pending[vpage] = policy
        return child

    def handle_cow_fault(self, vaddr: int, space: AddressSpace | None = None) -> bool:
        """Resolve a write fault on a COW page; True when it was one."""
        space = space or self.current
        vpage = (vaddr & M32) >> PAGE_SHIFT
        policy = space.cow_pending.pop(vpage, None)
        if policy is None:
            return False
        e = space.mappings[vpage]
        phys = self.mmu.phys
        src = e.frame << PAGE_SHIFT
        if policy is CowPolicy.INHERIT_BUDDY:
            data, flag = self.alloc_buddy_pair()
            phys.write(data << PAGE_SHIFT, phys.read(src, PAGE_SIZE))
            flag_bytes = phys.read(src + PAGE_SIZE, PAGE_SIZE)
            phys.write(flag << PAGE_SHIFT, flag_bytes)
            self._notify("restore_frame", data, flag_bytes)
            self._write_pte(space, vpage, MapEntry(data, True, e.executable, True))
        else:
            data = self.allocator.alloc_frame()
            phys.write(data << PAGE_SHIFT, phys.read(src, PAGE_SIZE))
            self._write_pte(space, vpage, MapEntry(data, True, e.executable, False))
        self.mmu.counters.cow_faults += 1
        return True

    # -- image loading ------------------------------------------------------------

    def load_image(self, image: GuestImage, blob: bytes,
                   space: AddressSpace | None = None) -> int:
        """Map and copy an assembled guest image; returns the entry address."""
        space = space or self.current
        for seg in image.segments:
            first = seg.vaddr >> PAGE_SHIFT
            last = (seg.vaddr + seg.length - 1) >> PAGE_SHIFT
            for vpage in range(first, last + 1):
                e = space.mappings.get(vpage)
                want_w = "w" in seg.perms
                want_x = "x" in seg.perms
                if e is None:
                    self.map_page(vpage << PAGE_SHIFT, writable=want_w,
                                  executable=want_x, space=space)
                elif (want_w and not e.writable) or (want_x and not e.executable):
                    self._write_pte(space, vpage, MapEntry(
                        e.frame, e.writable or want_w, e.executable or want_x,
                        e.breakpoint, e.buddy_marker))
            data = blob[seg.offset:seg.offset + seg.length]
            self.debug_write(seg.vaddr, data, space)
        for vaddr in image.required_buddy_pages:
            self.attach_buddy(vaddr, space)
        return image.entry

    # -- statistics -----------------------------------------------------------------

    def stats(self) -> dict[str, int]:
        return {
            "frames_total": self.allocator.total,
            "frames_used": self.allocator.frames_used,
            "pairs_live": len(self.allocator.pairs),
            "swap_slots_used": len(self.swap_store),
        }
