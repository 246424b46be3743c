from pathlib import Path

import pytest

from omegacov.appdsl import AppModel, load_corpus, parse_app

DATA = Path(__file__).resolve().parents[1] / "src" / "omegacov" / "data"
FIXTURES = DATA / "fixtures"
CORPUS = DATA / "corpus"


def fixture_text(name: str) -> str:
    return (FIXTURES / name).read_text(encoding="utf-8")


def load_fixture(name: str) -> AppModel:
    return parse_app(fixture_text(name))


@pytest.fixture(scope="session")
def corpus() -> list[AppModel]:
    return load_corpus(CORPUS)


@pytest.fixture
def dual() -> AppModel:
    return load_fixture("dual_scenario.oapp")


# criterion number -> (passed, one-line detail), filled by test_acceptance
CRITERIA: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
