import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE: dict[str, str] = {}


def record_criterion(name: str, passed: bool, detail: str) -> str:
    """Store and print one verdict line for an acceptance criterion."""
    line = f"{name}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[name] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for name in sorted(ACCEPTANCE, key=lambda s: int(s.split("-")[1])):
            terminalreporter.write_line(ACCEPTANCE[name])
