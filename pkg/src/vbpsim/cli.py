"""Command-line entry point.

Subcommands: ``asm`` (assemble), ``run`` (execute with a trap mode and
breakpoint script), ``debug`` (interactive REPL), ``serve`` (wire-protocol
server), ``bench`` (the guest x mode x breakpoint matrix), ``scenario``
(named corpus scenarios), and ``client`` (scripted protocol client that
captures its transcript).

Exit codes: 0 success, 1 user error, 2 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import corpus
from .asm import AsmError, assemble
from .debugger import SessionRecipe, Timeout, TrapMode
from .image import ManifestError, build_image, read_image, write_image
from .isa import decode
from .kernel import KernelError
from .legacy import LegacyError
from .mmu import flags_to_str, parse_flags
from .server import run_client, serve_session

USER_ERROR = 1
INTERNAL_ERROR = 2


def _parse_script_op(text: str) -> tuple:
    parts = text.split()
    if not parts:
        raise ValueError("empty breakpoint op")
    op = parts[0]
    if op in ("vbp", "vbp_page"):
        return (op, int(parts[1], 0), parse_flags(parts[2]) if len(parts) > 2 else parse_flags("x"))
    if op in ("int3", "attach"):
        return (op, int(parts[1], 0))
    if op == "dr":
        return ("dr", int(parts[1], 0), int(parts[2], 0), parts[3])
    if op == "splitview":
        return ("splitview", int(parts[1], 0), tuple(int(p, 0) for p in parts[2:]))
    if op == "hook":
        return ("hook", int(parts[1], 0), parts[2])
    if op == "inject":
        return ("inject", int(parts[1], 0), tuple(bytes.fromhex(parts[2])))
    raise ValueError(f"unknown breakpoint op {op!r}")


def cmd_asm(args) -> int:
    try:
        source = open(args.source).read()
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USER_ERROR
    try:
        program = assemble(source)
        image, blob = build_image(program)
        write_image(args.output, image, blob)
    except (AsmError, ManifestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USER_ERROR
    return 0


def _build_session(args):
    image, blob = read_image(args.image)
    script = tuple(_parse_script_op(op) for op in (args.bp or []))
    recipe = SessionRecipe(image=image, blob=blob, script=script,
                           mode=TrapMode(args.trap_mode),
                           taint=getattr(args, "taint", False),
                           budget=args.max_cycles)
    return recipe.build()


def cmd_run(args) -> int:
    try:
        session = _build_session(args)
    except (OSError, ManifestError, ValueError, KernelError, LegacyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USER_ERROR
    status, _last = session.run_to_completion(args.max_cycles)
    for ev in session.event_log:
        print(json.dumps(ev.record(), sort_keys=True))
    print(json.dumps({"status": status,
                      "out": bytes(session.machine.out_bytes).hex()},
                     sort_keys=True))
    if args.counters:
        with open(args.counters, "w") as fh:
            for key, value in session.counters.as_dict().items():
                fh.write(f"{key}\t{value}\n")
    return 0


def cmd_serve(args) -> int:
    try:
        session = _build_session(args)
    except (OSError, ManifestError, ValueError, KernelError, LegacyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USER_ERROR
    try:
        return serve_session(session, host=args.host, port=args.port)
    except OSError as exc:
        print(f"error: cannot bind: {exc}", file=sys.stderr)
        return USER_ERROR


def cmd_bench(args) -> int:
    guests = args.guests or list(corpus.BENCH_GUESTS)
    modes = [TrapMode(m) for m in (args.modes or [m.value for m in corpus.BENCH_MODES])]
    counts = args.bp_counts or list(corpus.BENCH_BP_COUNTS)
    table = corpus.bench_table(corpus.bench_rows(guests, modes, counts))
    if args.out:
        open(args.out, "w").write(table)
    else:
        sys.stdout.write(table)
    return 0


def cmd_scenario(args) -> int:
    names = corpus.scenario_names() if args.all else [args.name]
    if not args.all and args.name not in corpus.scenario_names():
        print(f"error: unknown scenario {args.name!r}", file=sys.stderr)
        return USER_ERROR
    failed = 0
    for name in names:
        result = corpus.run_scenario(name)
        print(json.dumps(result.record(), sort_keys=True))
        failed += 0 if result.passed else 1
    return 0 if failed == 0 else USER_ERROR


def cmd_client(args) -> int:
    actions = json.load(open(args.actions))
    sent, replies, events = run_client(args.host, args.port, actions)
    if args.transcript:
        with open(args.transcript, "w") as fh:
            fh.write("\n".join(sent) + "\n")
    for msg in replies:
        print(json.dumps(msg, sort_keys=True))
    for ev in events:
        print(json.dumps({"event": ev}, sort_keys=True))
    return 0


# -- interactive REPL ------------------------------------------------------------

_REPL_HELP = """\
commands:
  b <addr> [rwxfht]   set per-byte breakpoint flags (default x)
  d <addr>            clear flags at addr
  bpage <addr> <fl>   set flags on every byte of the page
  s                   step one instruction
  c                   continue to the next event
  regs                show registers
  mem <addr> <len>    hex dump of guest memory (data view)
  bp <addr>           read the flag byte behind addr
  pt                  dump page table mappings
  tlb                 dump TLB entries
  counters            show performance counters
  mode <m>            switch trap mode (vbp int3 splitview singlestep debugregs)
  q                   quit
"""


def _repl_event(result) -> str:
    if result is None:
        return "running"
    if isinstance(result, Timeout):
        return f"timeout at cycle {result.cycle}"
    return str(result)


def cmd_debug(args) -> int:
    try:
        session = _build_session(args)
    except (OSError, ManifestError, ValueError, KernelError, LegacyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USER_ERROR
    machine = session.machine
    print(f"loaded; entry pc={machine.pc:#010x}; mode={session.mode.value}")
    while True:
        try:
            line = input("(vbpsim) ").strip()
        except EOFError:
            return 0
        if not line:
            continue
        parts = line.split()
        cmd = parts[0]
        try:
            if cmd == "q":
                return 0
            elif cmd == "b":
                flags = parse_flags(parts[2]) if len(parts) > 2 else parse_flags("x")
                session.kernel.set_vbp(int(parts[1], 16), flags)
            elif cmd == "d":
                session.kernel.clear_vbp(int(parts[1], 16))
            elif cmd == "bpage":
                session.kernel.set_vbp_page(int(parts[1], 16), parse_flags(parts[2]))
            elif cmd == "s":
                print(_repl_event(session.step_once()))
            elif cmd == "c":
                print(_repl_event(session.continue_run(max_cycles=10_000_000)))
            elif cmd == "regs":
                for i in range(0, 8, 4):
                    print("  ".join(f"R{j}={machine.regs[j]:#018x}" for j in range(i, i + 4)))
                print(f"PC={machine.pc:#010x} ZF={int(machine.zf)} TF={int(machine.tf)} "
                      f"cycle={machine.cycle}")
            elif cmd == "mem":
                addr = int(parts[1], 16)
                blob = session.kernel.debug_read(addr, int(parts[2], 0) if len(parts) > 2 else 64)
                for off in range(0, len(blob), 16):
                    row = blob[off:off + 16]
                    print(f"{addr + off:#010x}: {row.hex(' ')}")
            elif cmd == "bp":
                flags = session.kernel.read_vbp(int(parts[1], 16))
                print(f"{flags:#04x} ({flags_to_str(flags)})")
            elif cmd == "pt":
                for vpage in sorted(session.kernel.current.mappings):
                    e = session.kernel.current.mappings[vpage]
                    perms = ("r" + ("w" if e.writable else "-")
                             + ("x" if e.executable else "-"))
                    bp = " bp" if e.breakpoint else ""
                    print(f"{vpage << 12:#010x} -> frame {e.frame:5d} {perms}{bp}")
            elif cmd == "tlb":
                for vpn, (pfn, w, x, bp) in session.kernel.mmu.tlb.entries.items():
                    print(f"{vpn << 12:#010x} -> frame {pfn:5d} w={int(w)} x={int(x)} bp={int(bp)}")
            elif cmd == "counters":
                for key, value in session.counters.as_dict().items():
                    print(f"{key:22} {value}")
            elif cmd == "mode":
                session.set_mode(TrapMode(parts[1]))
                print(f"mode={session.mode.value}")
            elif cmd == "dis":
                addr = int(parts[1], 16) if len(parts) > 1 else machine.pc
                for _ in range(8):
                    raw = session.kernel.debug_read(addr, 10)
                    instr = decode(raw)
                    print(f"{addr:#010x}: {raw[:instr.length].hex():20} {instr.text()}")
                    addr += instr.length
            else:
                print(_REPL_HELP, end="")
        except (KernelError, LegacyError, ValueError, IndexError) as exc:
            print(f"error: {exc}")
            print(_REPL_HELP, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vbpsim")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("asm", help="assemble a guest source file")
    p.add_argument("source")
    p.add_argument("output")
    p.set_defaults(fn=cmd_asm)

    def add_run_args(p):
        p.add_argument("image")
        p.add_argument("--trap-mode", default="vbp",
                       choices=[m.value for m in TrapMode])
        p.add_argument("--bp", action="append", metavar="OP",
                       help='breakpoint script op, e.g. "vbp 0x1000 xw"')
        p.add_argument("--max-cycles", type=int, default=1_000_000)
        p.add_argument("--taint", action="store_true")

    p = sub.add_parser("run", help="run a guest image to completion")
    add_run_args(p)
    p.add_argument("--counters", metavar="PATH")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("debug", help="interactive debugger REPL")
    add_run_args(p)
    p.set_defaults(fn=cmd_debug)

    p = sub.add_parser("serve", help="serve the wire protocol for the inspector UI")
    add_run_args(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("bench", help="run the bench matrix")
    p.add_argument("--guests", nargs="*")
    p.add_argument("--modes", nargs="*")
    p.add_argument("--bp-counts", nargs="*", type=int)
    p.add_argument("--out", metavar="PATH")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("scenario", help="run a named corpus scenario")
    p.add_argument("name", nargs="?")
    p.add_argument("--all", action="store_true")
    p.set_defaults(fn=cmd_scenario)

    p = sub.add_parser("client", help="scripted protocol client")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--actions", required=True)
    p.add_argument("--transcript", metavar="PATH")
    p.set_defaults(fn=cmd_client)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "scenario" and not args.all and not args.name:
        parser.error("scenario needs a name or --all")
    try:
        return args.fn(args)
    except KeyboardInterrupt:
        return USER_ERROR
    except AssertionError as exc:
        print(f"internal invariant violation: {exc}", file=sys.stderr)
        return INTERNAL_ERROR


if __name__ == "__main__":
    sys.exit(main())
