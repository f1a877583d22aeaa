"""Prints one pass/fail line per acceptance criterion at the end of the run."""

import pytest

_CRITERIA = {}  # nodeid -> (number, title)
_OUTCOMES = {}  # nodeid -> (passed, measured)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance criterion")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            _CRITERIA[item.nodeid] = mark.args


def pytest_runtest_logreport(report):
    if report.nodeid not in _CRITERIA:
        return
    measured = "; ".join(v for k, v in report.user_properties if k == "measured")
    if report.when == "call" or report.failed:
        passed = report.passed and _OUTCOMES.get(report.nodeid, (True, ""))[0]
        _OUTCOMES[report.nodeid] = (passed, measured or _OUTCOMES.get(report.nodeid, (0, ""))[1])


@pytest.fixture
def measured(request):
    """Call with a string to attach measured values to the criterion line."""
    return lambda text: request.node.user_properties.append(("measured", text))


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for nodeid, (number, title) in sorted(_CRITERIA.items(), key=lambda kv: kv[1][0]):
        if nodeid not in _OUTCOMES:
            continue
        passed, text = _OUTCOMES[nodeid]
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}"
        tr.write_line(line + (f"  [{text}]" if text else ""))
