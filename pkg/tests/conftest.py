import pytest

ACCEPTANCE_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance(num, name): marks a test as one acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker and report.when == "call":
        num, name = marker.args
        if report.skipped:
            ACCEPTANCE_RESULTS[num] = (name, "SKIP", report.longreprtext)
        else:
            ACCEPTANCE_RESULTS[num] = (name, "PASS" if report.passed else "FAIL", "")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        name, status, detail = ACCEPTANCE_RESULTS[num]
        line = f"criterion {num} ({name}): {status}"
        if status == "SKIP" and detail:
            line += f"  [{detail.splitlines()[-1][:100]}]"
        terminalreporter.write_line(line)
