"""CLI surfaces: assembling, running, bench output, scenario records."""

import json

import pytest

from vbpsim.cli import main
from vbpsim.corpus import fixture_source

GOOD = """
org 0x1000
start:
    MOVI R1, 0x2A
    OUT R1
    HALT
"""


@pytest.fixture
def workdir(tmp_path):
    return tmp_path


def test_asm_writes_image_and_manifest(workdir, capsys):
    src = workdir / "guest.asm"
    src.write_text(GOOD)
    out = workdir / "guest.bin"
    assert main(["asm", str(src), str(out)]) == 0
    assert out.exists()
    manifest = (workdir / "guest.bin.manifest").read_text()
    assert "entry 0x00001000" in manifest
    assert "segment 0x00001000" in manifest


def test_asm_unresolved_label_exits_nonzero_and_names_it(workdir, capsys):
    src = workdir / "bad.asm"
    src.write_text("org 0x1000\nJMP missing\n")
    assert main(["asm", str(src), str(workdir / "bad.bin")]) == 1
    assert "missing" in capsys.readouterr().err


def test_asm_empty_source_reports_no_entry(workdir, capsys):
    src = workdir / "empty.asm"
    src.write_text("; nothing\n")
    assert main(["asm", str(src), str(workdir / "empty.bin")]) == 1
    assert "no entry point" in capsys.readouterr().err


def _build(workdir, source=GOOD, name="guest"):
    src = workdir / f"{name}.asm"
    src.write_text(source)
    out = workdir / f"{name}.bin"
    assert main(["asm", str(src), str(out)]) == 0
    return out


def test_run_emits_events_and_counters(workdir, capsys):
    image = _build(workdir)
    counters = workdir / "counters.txt"
    rc = main(["run", str(image), "--bp", "vbp 0x1000 x",
               "--counters", str(counters)])
    assert rc == 0
    lines = capsys.readouterr().out.strip().splitlines()
    events = [json.loads(l) for l in lines[:-1]]
    summary = json.loads(lines[-1])
    assert events[0]["kind"] == "VbpHit"
    assert summary == {"status": "halt", "out": "2a"}
    table = dict(l.split("\t") for l in counters.read_text().strip().splitlines())
    assert table["instructions_retired"] == "3"
    assert int(table["buddy_refs"]) > 0


def test_run_hot_loop_without_breakpoints_has_zero_buddy_refs(workdir, capsys):
    src = workdir / "hot.asm"
    src.write_text(fixture_source("hot_loop_bench"))
    image = workdir / "hot.bin"
    assert main(["asm", str(src), str(image)]) == 0
    counters = workdir / "c.txt"
    assert main(["run", str(image), "--counters", str(counters)]) == 0
    table = dict(l.split("\t") for l in counters.read_text().strip().splitlines())
    assert table["buddy_refs"] == "0"


def test_run_singlestep_exits_equal_instructions(workdir, capsys):
    image = _build(workdir)
    counters = workdir / "c.txt"
    assert main(["run", str(image), "--trap-mode", "singlestep",
                 "--counters", str(counters)]) == 0
    table = dict(l.split("\t") for l in counters.read_text().strip().splitlines())
    assert table["debug_exits"] == table["instructions_retired"]


def test_run_missing_image_is_user_error(workdir, capsys):
    assert main(["run", str(workdir / "nope.bin")]) == 1


def test_bench_table_shape(workdir, capsys):
    rc = main(["bench", "--guests", "hot_loop_bench", "--modes", "vbp",
               "--bp-counts", "0", "1"])
    assert rc == 0
    out = capsys.readouterr().out.strip().splitlines()
    header = out[0].split("\t")
    assert header == ["guest", "mode", "bps", "instructions", "data_refs",
                      "buddy_refs", "debug_exits", "synthetic_cycles", "status"]
    assert len(out) == 3


def test_scenario_single_and_all(capsys):
    assert main(["scenario", "misaligned_victim.int3_misaligned"]) == 0
    record = json.loads(capsys.readouterr().out.strip())
    assert record["passed"] is True
    assert main(["scenario", "bogus.name"]) == 1


def test_scenario_requires_name_or_all(capsys):
    with pytest.raises(SystemExit):
        main(["scenario"])
