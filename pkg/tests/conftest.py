import numpy as np
import pytest

from pnrfilter.signal_model import PulseShape


@pytest.fixture
def shape():
    return PulseShape.linear(2.94, 6)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    number, title = marker.args
    passed = call.excinfo is None
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "measured")
    entry = _CRITERIA.setdefault(number, [title, True, []])
    entry[1] = entry[1] and passed
    if detail:
        entry[2].append(detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, passed, details = _CRITERIA[number]
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {title}"
        if details:
            line += " [" + "; ".join(details) + "]"
        terminalreporter.write_line(line)
