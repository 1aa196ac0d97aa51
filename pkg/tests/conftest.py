"""Shared fixtures and the acceptance result table."""

from __future__ import annotations

import pytest

from vbpsim.asm import assemble
from vbpsim.debugger import SessionRecipe
from vbpsim.image import build_image

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def note_acceptance(criterion: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS.append((criterion, passed, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in ACCEPTANCE_RESULTS:
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"{status}  {criterion}: {detail}")


def make_recipe(source: str, **kwargs) -> SessionRecipe:
    image, blob = build_image(assemble(source))
    return SessionRecipe(image=image, blob=blob, **kwargs)


@pytest.fixture
def recipe_factory():
    return make_recipe
