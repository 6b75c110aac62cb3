import numpy as np
import pytest

from cgt.graph import Graph


def random_graph(rng: np.random.Generator, n: int, p: float, d0: int = 4) -> Graph:
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(len(iu)) < p
    return Graph(n, np.stack([iu[keep], ju[keep]], 1), rng.normal(size=(n, d0)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_criteria: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call" and report.passed:
        return
    number, title = mark.args
    entry = _criteria.setdefault(number, [title, True, 0.0, ""])
    if report.failed:
        entry[1] = False
        entry[3] = str(report.longrepr.reprcrash.message if hasattr(report.longrepr, "reprcrash") else report.longrepr)
    if report.when == "call":
        entry[2] += report.duration


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok, secs, why = _criteria[number]
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title} ({secs:.1f}s)"
        if not ok:
            line += f"  -- {why.splitlines()[0][:160]}"
        terminalreporter.write_line(line)
