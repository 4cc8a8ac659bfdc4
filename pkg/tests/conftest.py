import pytest

from helpers import csv_line, csv_text

_CRITERIA: dict[int, tuple[str, str]] = {}


@pytest.fixture
def six_scan_csv():
    """Six frontal scans of one patient at ages 41, 45, 47, 47, 48, 50."""
    ages = [41, 45, 47, 47, 48, 50]
    rows = [csv_line(f"train/patient00001/study{i}/view1_frontal.jpg", a) for i, a in enumerate(ages, start=1)]
    return csv_text(rows)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    failed = rep.failed or (rep.when == "setup" and rep.skipped)
    if rep.when == "call" or failed:
        status = "FAIL" if failed else ("SKIP" if rep.skipped else "PASS")
        if _CRITERIA.get(number, ("", ""))[0] != "FAIL":
            _CRITERIA[number] = (status, title)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title = _CRITERIA[number]
        terminalreporter.write_line(f"{status} criterion {number}: {title}")
