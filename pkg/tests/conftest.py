import pytest

from tracefit.inference import DetecteeHistogram

OBSERVED = {0: 766, 1: 87, 2: 34, 3: 19, 4: 16, 5: 12, 6: 3, 7: 4, 8: 3, 10: 2, 11: 1, 12: 1,
          13: 1, 15: 1, 16: 1, 19: 2, 22: 1, 28: 1, 29: 1}


@pytest.fixture(scope="session")
def karnataka():
    return DetecteeHistogram.from_pairs(OBSERVED.items())


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
