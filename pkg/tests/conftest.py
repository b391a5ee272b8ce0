from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> (title, passed, details)
_ACCEPTANCE: dict[int, tuple[str, bool, list[str]]] = {}


@pytest.fixture
def measured(request):
    """Attach a measured value to the acceptance summary line of this test."""

    def note(text: str) -> None:
        request.node.user_properties.append(("acceptance_detail", text))

    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or (report.when != "call" and not report.failed):
        return
    number, title = mark.args
    details = [v for k, v in item.user_properties if k == "acceptance_detail"]
    _ACCEPTANCE[number] = (title, report.passed, details)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, passed, details = _ACCEPTANCE[number]
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {title}"
        if details:
            line += f" ({'; '.join(details)})"
        terminalreporter.write_line(line)
