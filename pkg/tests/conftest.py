import re

_CRITERIA = {}  # n -> [name, status, seconds]


def pytest_runtest_logreport(report):
    m = re.search(r"test_criterion_(\d+)_(\w+)", report.nodeid)
    if not m:
        return
    rec = _CRITERIA.setdefault(int(m.group(1)), [m.group(2), "PASS", 0.0])
    rec[2] += report.duration
    if report.failed:
        rec[1] = "FAIL"
    elif report.skipped and rec[1] == "PASS":
        rec[1] = "SKIP"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        name, status, secs = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n} [{name}]: {status} ({secs:.1f} s)")
