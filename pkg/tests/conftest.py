import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_criteria: dict[str, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    cid, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        if hasattr(rep, "wasxfail"):
            status = "FAIL (expected)" if rep.skipped else "PASS (unexpected)"
        else:
            status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        _criteria[cid] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")

    def order(cid):
        num = "".join(ch for ch in cid if ch.isdigit())
        return int(num), cid

    for cid in sorted(_criteria, key=order):
        title, status = _criteria[cid]
        terminalreporter.write_line(f"criterion {cid:<3} {status:<17} {title}")
