import pytest

_ACCEPTANCE: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(num, title): part of a numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call":
        return
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        num, title = marker.args
        _ACCEPTANCE.setdefault(num, []).append((title, report.outcome))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        entries = _ACCEPTANCE[num]
        verdict = "PASS" if all(o == "passed" for _, o in entries) else "FAIL"
        terminalreporter.write_line(f"criterion {num:2d}: {verdict} - {entries[0][0]}")
