"""Wire-protocol server for the inspector UI and scripted clients.

Line-delimited JSON over a local TCP stream socket, one client at a time.
Requests carry an integer ``id``, a ``cmd`` string, and an ``args`` object;
responses echo the id with ``ok`` plus ``data`` or ``error``.  Unsolicited
event frames carry no id and a single ``event`` field; they are emitted as
the session produces them, between command boundaries.
"""

from __future__ import annotations

import json
import socket

from .debugger import Session, Timeout, TrapMode
from .isa import decode
from .mmu import PAGE_SHIFT, parse_flags

__all__ = ["serve_session", "canonical", "DEFAULT_CONTINUE_BUDGET"]

DEFAULT_CONTINUE_BUDGET = 1_000_000


def canonical(obj: dict) -> str:
    """Canonical wire encoding: sorted keys, no whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _state_data(session: Session) -> dict:
    m = session.machine
    stopped = session.stopped_on
    return {
        "pc": m.pc, "regs": list(m.regs), "zf": m.zf, "tf": m.tf,
        "cycle": m.cycle, "halted": m.halted, "mode": session.mode.value,
        "stopped": stopped.record() if stopped is not None else None,
    }


def _pt_data(session: Session) -> dict:
    entries = []
    for vpage in sorted(session.kernel.current.mappings):
        e = session.kernel.current.mappings[vpage]
        entries.append({
            "vaddr": vpage << PAGE_SHIFT, "frame": e.frame,
            "writable": e.writable, "executable": e.executable,
            "breakpoint": e.breakpoint,
        })
    return {"entries": entries}


def _tlb_data(session: Session) -> dict:
    entries = []
    for vpn, (pfn, w, x, bp) in session.kernel.mmu.tlb.entries.items():
        entries.append({"vaddr": vpn << PAGE_SHIFT, "frame": pfn,
                        "writable": w, "executable": x, "breakpoint": bp})
    return {"entries": entries}


def _disasm_data(session: Session, addr: int, count: int) -> dict:
    lines = []
    va = addr
    for _ in range(max(0, min(count, 128))):
        try:
            raw = session.kernel.debug_read(va, 10)
        except Exception:
            break
        instr = decode(raw)
        lines.append({"addr": va, "bytes": raw[:instr.length].hex(),
                      "text": instr.text()})
        va += instr.length
    return {"lines": lines}


def _stop_data(result) -> dict:
    if isinstance(result, Timeout):
        return {"stopped": {"kind": "Timeout", "cycle": result.cycle}}
    return {"stopped": result.record() if result is not None else None}


def handle_command(session: Session, cmd: str, args: dict) -> dict:
    """Execute one protocol command against the session; returns data."""
    if cmd == "state":
        return _state_data(session)
    if cmd == "read_mem":
        blob = session.kernel.debug_read(int(args["addr"]), int(args.get("len", 16)))
        return {"addr": int(args["addr"]), "bytes": blob.hex()}
    if cmd == "read_bp":
        addr = int(args["addr"])
        n = int(args.get("len", 1))
        flags = [session.kernel.read_vbp(addr + i) for i in range(n)]
        return {"addr": addr, "flags": flags}
    if cmd == "set_bp":
        flags = args["flags"]
        flags = parse_flags(flags) if isinstance(flags, str) else int(flags)
        session.kernel.set_vbp(int(args["addr"]), flags)
        return {}
    if cmd == "clear_bp":
        session.kernel.clear_vbp(int(args["addr"]))
        return {}
    if cmd == "set_bp_page":
        flags = args["flags"]
        flags = parse_flags(flags) if isinstance(flags, str) else int(flags)
        session.kernel.set_vbp_page(int(args["addr"]), flags)
        return {}
    if cmd == "hook":
        session.register_hook(int(args["addr"]), str(args["hook_id"]))
        return {}
    if cmd == "step":
        ev = session.step_once()
        data = _stop_data(ev)
        data.update(_state_data(session))
        return data
    if cmd == "continue":
        budget = int(args.get("max_cycles", DEFAULT_CONTINUE_BUDGET))
        result = session.continue_run(max_cycles=budget)
        data = _stop_data(result)
        data.update(_state_data(session))
        return data
    if cmd == "mode":
        session.set_mode(TrapMode(str(args["mode"])))
        return {"mode": session.mode.value}
    if cmd == "pt":
        return _pt_data(session)
    if cmd == "tlb":
        return _tlb_data(session)
    if cmd == "counters":
        return session.counters.as_dict()
    if cmd == "stats":
        return session.kernel.stats()
    if cmd == "disasm":
        return _disasm_data(session, int(args["addr"]), int(args.get("count", 8)))
    raise ValueError(f"UnknownCommand:{cmd}")


def serve_session(session: Session, host: str = "127.0.0.1", port: int = 0) -> int:
    """Serve one client until it sends ``shutdown`` or disconnects."""
    srv = socket.create_server((host, port))
    actual = srv.getsockname()[1]
    print(f"LISTENING {actual}", flush=True)
    conn, _peer = srv.accept()
    wfile = conn.makefile("wb")

    def emit(line: str) -> None:
        wfile.write(line.encode() + b"\n")
        wfile.flush()

    session.event_listeners.append(
        lambda ev: emit(canonical({"event": ev.record()})))

    rfile = conn.makefile("rb")
    try:
        for raw in rfile:
            raw = raw.strip()
            if not raw:
                continue
            try:
                req = json.loads(raw)
            except json.JSONDecodeError:
                emit(canonical({"id": None, "ok": False, "error": "BadRequest"}))
                continue
            rid = req.get("id")
            cmd = req.get("cmd", "")
            if cmd == "shutdown":
                emit(canonical({"id": rid, "ok": True, "data": {}}))
                break
            try:
                data = handle_command(session, cmd, req.get("args") or {})
                emit(canonical({"id": rid, "ok": True, "data": data}))
            except Exception as exc:  # errors go to the client, not the log
                name = str(exc).split(":", 1)[0] if str(exc).startswith("UnknownCommand") \
                    else type(exc).__name__
                emit(canonical({"id": rid, "ok": False, "error": name}))
    finally:
        rfile.close()
        wfile.close()
        conn.close()
        srv.close()
    return 0


# -- scripted client (transcript capture) --------------------------------------


def action_to_request(action: dict, rid: int) -> dict:
    """Deterministic action -> wire request mapping, shared with the UI."""
    do = action["do"]
    if do == "set_bp":
        flags = action.get("flags", "x")
        flags = parse_flags(flags) if isinstance(flags, str) else int(flags)
        return {"id": rid, "cmd": "set_bp",
                "args": {"addr": int(action["addr"]), "flags": flags}}
    if do == "clear_bp":
        return {"id": rid, "cmd": "clear_bp", "args": {"addr": int(action["addr"])}}
    if do == "read_bp":
        return {"id": rid, "cmd": "read_bp",
                "args": {"addr": int(action["addr"]), "len": int(action.get("len", 1))}}
    if do == "read_mem":
        return {"id": rid, "cmd": "read_mem",
                "args": {"addr": int(action["addr"]), "len": int(action.get("len", 16))}}
    if do in ("state", "continue", "step", "pt", "tlb", "counters", "stats",
              "shutdown"):
        return {"id": rid, "cmd": do, "args": {}}
    if do == "disasm":
        return {"id": rid, "cmd": "disasm",
                "args": {"addr": int(action["addr"]), "count": int(action.get("count", 8))}}
    if do == "mode":
        return {"id": rid, "cmd": "mode", "args": {"mode": str(action["mode"])}}
    raise ValueError(f"unknown action {do!r}")


def run_client(host: str, port: int, actions: list[dict]):
    """Drive a server with scripted actions; returns (sent lines, replies, events)."""
    sent: list[str] = []
    replies: list[dict] = []
    events: list[dict] = []
    with socket.create_connection((host, port)) as conn:
        rfile = conn.makefile("rb")
        for rid, action in enumerate(actions, start=1):
            line = canonical(action_to_request(action, rid))
            sent.append(line)
            conn.sendall(line.encode() + b"\n")
            while True:
                raw = rfile.readline()
                if not raw:
                    raise ConnectionError("server closed the connection")
                msg = json.loads(raw)
                if "event" in msg:
                    events.append(msg["event"])
                    continue
                replies.append(msg)
                break
    return sent, replies, events
