"""Translation, TLB caching of the breakpoint bit, buddy lookups."""

import pytest

from vbpsim.kernel import KernelSim
from vbpsim.mmu import (
    AccessKind, BP_FETCH, BP_W, BuddyChecker, Mmu, PAGE_SIZE, PageFault,
    PageFaultReason, PTE_BREAKPOINT, buddy_addr, pte_pack,
)


@pytest.fixture
def world():
    mmu = Mmu(phys_size=1024 * 1024)
    kernel = KernelSim(mmu, auto_attach=True)
    checker = BuddyChecker(mmu.phys)
    return mmu, kernel, checker


def test_index_split_10_10_12(world):
    mmu, kernel, _ = world
    kernel.map_page(0x0040_1000)
    frame = kernel.entry_for(0x0040_1000).frame
    paddr, bp = mmu.translate(0x0040_1234, AccessKind.READ)
    # PDE index 0x001, PTE index 0x001, offset 0x234
    assert (0x0040_1234 >> 22) == 0x001
    assert ((0x0040_1234 >> 12) & 0x3FF) == 0x001
    assert paddr == (frame << 12) | 0x234
    assert not bp


def test_tlb_hit_skips_walk(world):
    mmu, kernel, _ = world
    kernel.map_page(0x5000)
    mmu.translate(0x5000, AccessKind.READ)
    walks = mmu.counters.pt_walks
    hits = mmu.counters.tlb_hits
    mmu.translate(0x5123, AccessKind.READ)
    assert mmu.counters.tlb_hits == hits + 1
    assert mmu.counters.pt_walks == walks


def test_write_to_readonly_faults_without_tlb_fill(world):
    mmu, kernel, _ = world
    kernel.map_page(0x6000, writable=False)
    before = len(mmu.tlb)
    with pytest.raises(PageFault) as err:
        mmu.translate(0x6010, AccessKind.WRITE)
    assert err.value.reason is PageFaultReason.WRITE_PROTECTED
    assert len(mmu.tlb) == before


def test_execute_requires_executable(world):
    mmu, kernel, _ = world
    kernel.map_page(0x7000, executable=False)
    with pytest.raises(PageFault) as err:
        mmu.translate(0x7000, AccessKind.EXECUTE)
    assert err.value.reason is PageFaultReason.NO_EXEC


def test_unmapped_not_present(world):
    mmu, _, _ = world
    with pytest.raises(PageFault) as err:
        mmu.translate(0xDC15, AccessKind.EXECUTE)
    assert err.value.reason is PageFaultReason.NOT_PRESENT
    assert err.value.vaddr == 0xDC15


def test_buddy_addr_is_frame_plus_page():
    assert buddy_addr(0x0002_3000) == 0x0002_4000
    with pytest.raises(ValueError):
        buddy_addr(0x0002_3A7F)
    # byte-for-byte parity: same offset in the adjacent frame
    assert buddy_addr(0x0002_3000) + 0xA7F == 0x0002_4A7F


def test_clear_read_on_bp_page_counts_one_buddy_ref(world):
    mmu, kernel, checker = world
    kernel.map_page(0x8000)
    kernel.attach_buddy(0x8000)
    c = mmu.counters
    d0, b0 = c.data_refs, c.buddy_refs
    plan = mmu.data_access(0x8010, 8, AccessKind.READ, frozenset(), checker)
    assert plan.trap is None and not plan.hooks
    assert c.data_refs == d0 + 1
    assert c.buddy_refs == b0 + 1


def test_write_to_w_flagged_byte_traps(world):
    mmu, kernel, checker = world
    kernel.map_page(0x8000)
    kernel.set_vbp(0x8042, BP_W)
    plan = mmu.data_access(0x8042, 1, AccessKind.WRITE, frozenset(), checker)
    assert plan.trap == (0x8042, BP_W, AccessKind.WRITE)


def test_fetch_flag_mid_instruction_traps(world):
    mmu, kernel, checker = world
    kernel.map_page(0x1000, executable=True)
    kernel.debug_write(0x1000, bytes.fromhex("e910000000"))
    kernel.set_vbp(0x1002, BP_FETCH)
    raw, plan = mmu.fetch_instruction(0x1000, frozenset(), checker)
    assert raw == b""
    assert plan.trap == (0x1002, BP_FETCH, AccessKind.FETCH)


def test_stale_tlb_until_flush(world):
    mmu, kernel, checker = world
    kernel.map_page(0x9000)
    mmu.translate(0x9000, AccessKind.READ)  # cache without breakpoint bit
    # poke the PTE behind the TLB's back
    space = kernel.current
    entry = space.mappings[0x9]
    pte_addr = kernel._pte_addr(space, 0x9)
    mmu.phys.write_u64(pte_addr, pte_pack(entry.frame, present=True, writable=True,
                                          breakpoint=True))
    _, bp = mmu.translate(0x9000, AccessKind.READ)
    assert not bp  # stale result permitted before the flush
    mmu.flush_tlb(0x9000)
    _, bp = mmu.translate(0x9000, AccessKind.READ)
    assert bp


def test_flush_all_empties_tlb(world):
    mmu, kernel, _ = world
    kernel.map_page(0xA000)
    kernel.map_page(0xB000)
    mmu.translate(0xA000, AccessKind.READ)
    mmu.translate(0xB000, AccessKind.READ)
    assert len(mmu.tlb) == 2
    mmu.flush_tlb()
    assert len(mmu.tlb) == 0


def test_tlb_fifo_eviction(world):
    mmu, kernel, _ = world
    mmu.tlb.capacity = 4
    for i in range(6):
        kernel.map_page(0x10000 + i * PAGE_SIZE)
        mmu.translate(0x10000 + i * PAGE_SIZE, AccessKind.READ)
    assert len(mmu.tlb) == 4
    kept = sorted(mmu.tlb.entries)
    assert kept == [0x12, 0x13, 0x14, 0x15]


def test_translation_deterministic_regardless_of_tlb(world):
    mmu, kernel, _ = world
    kernel.map_page(0xC000)
    a, _ = mmu.translate(0xC123, AccessKind.READ)
    mmu.flush_tlb()
    b, _ = mmu.translate(0xC123, AccessKind.READ)
    mmu.tlb_enabled = False
    c, _ = mmu.translate(0xC123, AccessKind.READ)
    assert a == b == c


def test_phys_dump_load_roundtrip(world):
    mmu, kernel, _ = world
    kernel.map_page(0xD000)
    kernel.debug_write(0xD000, b"hello")
    blob = mmu.phys.dump()
    mmu.phys.write(0, b"\xff" * 64)
    mmu.phys.load(blob)
    assert kernel.debug_read(0xD000, 5) == b"hello"


def test_pte_pack_guards_invariants():
    with pytest.raises(ValueError):
        pte_pack(1, breakpoint=True, buddy_marker=True)
    with pytest.raises(ValueError):
        pte_pack(1, present=False, breakpoint=True)
    assert pte_pack(5, breakpoint=True) & PTE_BREAKPOINT
