"""Shared fixtures plus the per-criterion acceptance report printed after the run."""
from collections import OrderedDict

import pytest

_REPORT: "OrderedDict[int, list[tuple[bool, str]]]" = OrderedDict()


class AcceptanceReport:
    def record(self, criterion: int, ok: bool, detail: str) -> bool:
        _REPORT.setdefault(criterion, []).append((bool(ok), detail))
        return bool(ok)


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceReport()


def pytest_terminal_summary(terminalreporter):
    if not _REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(_REPORT):
        parts = _REPORT[criterion]
        status = "PASS" if all(ok for ok, _ in parts) else "FAIL"
        details = "; ".join(("" if ok else "[fail] ") + d for ok, d in parts)
        terminalreporter.write_line(f"criterion {criterion:2d}: {status}  {details}")
