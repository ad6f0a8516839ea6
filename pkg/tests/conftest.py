import pytest

from dpsvc.noise import NoiseSource

# name -> (passed, detail); filled by the acceptance module
CRITERIA = {}


@pytest.fixture
def zero():
    return NoiseSource(0, "zero")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(CRITERIA):
        ok, detail = CRITERIA[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
