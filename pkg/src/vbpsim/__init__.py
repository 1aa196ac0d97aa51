"""vbpsim: a small full-system simulator for per-byte memory breakpoints.

The package models a CPU with a variable-length ISA, a paging MMU whose
page table entries carry a breakpoint bit, a toy kernel that allocates
physically adjacent "buddy" frames holding one flag byte per data byte,
and a debugger that drives it all.  Legacy trapping mechanisms (int3
patching, debug registers, single-step, split code/data views) are
implemented alongside so their behavior can be compared experimentally.
"""

__version__ = "0.1.0"

from .isa import Op, Instruction, decode, encode
from .asm import assemble
from .mmu import AccessKind, Mmu, PageFault, PerfCounters, PAGE_SIZE
from .machine import DebugEvent, EventKind, Machine, TrapConfig
from .kernel import KernelSim, SwapPolicy, CowPolicy
from .debugger import Session, TrapMode, Timeout

__all__ = [
    "Op", "Instruction", "decode", "encode", "assemble",
    "AccessKind", "Mmu", "PageFault", "PerfCounters", "PAGE_SIZE",
    "DebugEvent", "EventKind", "Machine", "TrapConfig",
    "KernelSim", "SwapPolicy", "CowPolicy",
    "Session", "TrapMode", "Timeout",
]
