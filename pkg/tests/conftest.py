import functools

import pytest

from goalgraph.layout import LayoutPredictor
from goalgraph.library import build
from goalgraph.scenarios import ScenarioConfig


@functools.lru_cache(maxsize=None)
def _artifacts(family: str, n_demos: int, seed: int):
    lib = build(ScenarioConfig(family=family), n_demos, seed)
    return lib, LayoutPredictor().fit(lib)


@pytest.fixture(scope="session")
def artifacts():
    """Cached (library, predictor) per family; built once per test session."""

    def get(family: str, n_demos: int = 30, seed: int = 0):
        return _artifacts(family, n_demos, seed)

    return get


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def report():
    """Record one pass/fail line per acceptance criterion."""

    def emit(number: int, name: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
