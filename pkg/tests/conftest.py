import os

import pytest

_CRITERIA: dict[int, tuple[bool, str]] = {}


class CriterionLog:
    """Collects one verdict per acceptance criterion for the end-of-run report."""

    def record(self, number: int, passed: bool, detail: str) -> bool:
        _CRITERIA[number] = (bool(passed), detail)
        return bool(passed)


@pytest.fixture(scope="session")
def criteria() -> CriterionLog:
    return CriterionLog()


def pytest_collection_modifyitems(config, items):
    if os.environ.get("ESTFUSE_LONG") == "1":
        return
    skip = pytest.mark.skip(reason="long run; set ESTFUSE_LONG=1")
    for item in items:
        if "long" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        ok, detail = _CRITERIA[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
