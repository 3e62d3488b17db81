import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")
    config.stash[_RESULTS] = {}


def pytest_runtest_logreport(report):
    if report.when == "teardown" and not report.failed:
        return
    marker = dict(report.user_properties).get("criterion")
    if marker is None:
        return
    results = _CONFIG.stash[_RESULTS]
    number, title = marker
    detail = dict(report.user_properties).get("detail", "")
    ok = report.passed and results.get(number, (True,))[0]
    if report.when == "call" or report.failed:
        results[number] = (ok, title, detail, report.duration if report.when == "call" else 0.0)


_CONFIG = None


@pytest.hookimpl(tryfirst=True)
def pytest_sessionstart(session):
    global _CONFIG
    _CONFIG = session.config


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("criterion")
        if marker is not None:
            item.user_properties.append(("criterion", tuple(marker.args)))


@pytest.fixture
def detail(request):
    """Attach a one-line measurement summary to the acceptance report."""

    def note(text):
        request.node.user_properties.append(("detail", text))

    return note


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, title, text, seconds = results[number]
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"criterion {number} {status}: {title} ({seconds:.1f}s) {text}".rstrip())
