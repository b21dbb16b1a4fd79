import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from detfilt.likelihood import GroundTruthCache  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def gt_cache():
    """Ground-truth values shared by every test in the session."""
    return GroundTruthCache()


def record_acceptance(number: int, name: str, passed: bool, detail: str) -> None:
    line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
