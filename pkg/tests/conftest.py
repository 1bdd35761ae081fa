import numpy as np
import pytest

from surgskill import datapipe as dp

_CRITERIA = {}
_DETAILS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    marker = getattr(report, "_criterion", None)
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        outcome = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        _CRITERIA.setdefault(marker, []).append(outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None:
        rep._criterion = (m.args[0], m.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), outcomes in sorted(_CRITERIA.items()):
        if "FAIL" in outcomes:
            status = "FAIL"
        elif all(o == "SKIP" for o in outcomes):
            status = "SKIP"
        else:
            status = "PASS"
        terminalreporter.write_line(f"criterion {number}: {status}  {title}")
        for line in _DETAILS.get(number, []):
            terminalreporter.write_line(f"    {line}")


@pytest.fixture
def measured(request):
    """Record a measured value under the test's criterion for the summary."""
    number = request.node.get_closest_marker("criterion").args[0]
    return lambda text: _DETAILS.setdefault(number, []).append(text)


@pytest.fixture(scope="session")
def synthetic_corpus():
    trials, entries = dp.generate_synthetic_corpus(dp.SyntheticSpec())
    return trials, entries


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
