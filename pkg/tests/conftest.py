import pytest

_ACCEPTANCE_RESULTS = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker and report.when in ("setup", "call"):
        label = marker.kwargs["label"]
        if report.skipped:
            _ACCEPTANCE_RESULTS[label] = "SKIPPED"
        elif report.when == "call":
            _ACCEPTANCE_RESULTS[label] = ("PASS" if report.outcome == "passed"
                                          else "FAIL")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_ACCEPTANCE_RESULTS, key=lambda s: s.split()[0]):
        terminalreporter.write_line(f"criterion {label}: "
                                    f"{_ACCEPTANCE_RESULTS[label]}")


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance(label): names one acceptance criterion")
