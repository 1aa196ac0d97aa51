"""Wire protocol: framing, command dispatch, event interleaving."""

import json
import threading

import pytest

from vbpsim.server import (
    action_to_request, canonical, handle_command, run_client, serve_session,
)

from conftest import make_recipe

GUEST = """
org 0x1000
start:
    MOVI R1, 0x2A
    OUT R1
    HALT
"""


def _session():
    return make_recipe(GUEST).build()


def test_handle_state():
    data = handle_command(_session(), "state", {})
    assert data["pc"] == 0x1000
    assert data["regs"] == [0] * 8
    assert data["halted"] is False


def test_handle_set_bp_and_read_bp():
    session = _session()
    assert handle_command(session, "set_bp", {"addr": 0x1000, "flags": "x"}) == {}
    assert handle_command(session, "read_bp", {"addr": 0x1000}) == {
        "addr": 0x1000, "flags": [4]}


def test_handle_set_bp_unmapped_reports_no_buddy_frame():
    session = _session()
    with pytest.raises(Exception) as err:
        handle_command(session, "set_bp", {"addr": 0x999000, "flags": 4})
    assert type(err.value).__name__ == "NoBuddyFrame"


def test_handle_continue_reports_stop_and_state():
    session = _session()
    handle_command(session, "set_bp", {"addr": 0x1000, "flags": 4})
    data = handle_command(session, "continue", {})
    assert data["stopped"]["kind"] == "VbpHit"
    assert data["pc"] == 0x1000
    data = handle_command(session, "continue", {})
    assert data["stopped"]["kind"] == "Halt"
    assert data["halted"] is True


def test_handle_disasm():
    data = handle_command(_session(), "disasm", {"addr": 0x1000, "count": 3})
    texts = [line["text"] for line in data["lines"]]
    assert texts == ["MOVI R1, 0x2a", "OUT R1", "HALT"]


def test_handle_pt_tlb_counters():
    session = _session()
    pt = handle_command(session, "pt", {})
    assert any(e["vaddr"] == 0x1000 for e in pt["entries"])
    handle_command(session, "continue", {})
    tlb = handle_command(session, "tlb", {})
    assert tlb["entries"]
    counters = handle_command(session, "counters", {})
    assert counters["instructions_retired"] == 3


def test_unknown_command_maps_to_error_name():
    with pytest.raises(ValueError):
        handle_command(_session(), "frobnicate", {})


def test_canonical_is_sorted_and_compact():
    assert canonical({"b": 1, "a": {"z": 2, "y": 3}}) == '{"a":{"y":3,"z":2},"b":1}'


def test_action_mapping_is_deterministic():
    req = action_to_request({"do": "set_bp", "addr": 0x1000, "flags": "x"}, 1)
    assert req == {"id": 1, "cmd": "set_bp", "args": {"addr": 0x1000, "flags": 4}}
    again = action_to_request({"do": "set_bp", "addr": 0x1000, "flags": 4}, 1)
    assert canonical(req) == canonical(again)


def test_full_socket_round_trip_with_event_frames():
    session = _session()
    port_holder = {}
    ready = threading.Event()

    import socket as socket_mod
    real_create_server = socket_mod.create_server

    def capture_server(addr, **kw):
        srv = real_create_server(addr, **kw)
        port_holder["port"] = srv.getsockname()[1]
        ready.set()
        return srv

    socket_mod.create_server = capture_server
    try:
        thread = threading.Thread(
            target=serve_session, args=(session,), kwargs={"port": 0}, daemon=True)
        thread.start()
        assert ready.wait(5)
        actions = [
            {"do": "state"},
            {"do": "set_bp", "addr": 0x1000, "flags": "x"},
            {"do": "continue"},
            {"do": "read_bp", "addr": 0x1000},
            {"do": "shutdown"},
        ]
        sent, replies, events = run_client("127.0.0.1", port_holder["port"], actions)
    finally:
        socket_mod.create_server = real_create_server
    thread.join(timeout=5)
    assert [json.loads(s)["cmd"] for s in sent] == [
        "state", "set_bp", "continue", "read_bp", "shutdown"]
    assert all(r["ok"] for r in replies)
    assert replies[2]["data"]["stopped"]["kind"] == "VbpHit"
    assert replies[3]["data"]["flags"] == [4]
    assert any(e["kind"] == "VbpHit" for e in events)
