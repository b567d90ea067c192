import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from webbias.clicks import CategoryMap, ClickRecord, ClickTable

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def dense_pagerank(n, edges, alpha=0.15, iters=5000):
    """Plain dense power iteration with dangling columns replaced by 1/n."""
    a = np.zeros((n, n))
    for s, d in set(edges):
        if s != d:
            a[d, s] = 1.0
    deg = a.sum(axis=0)
    for j in range(n):
        a[:, j] = a[:, j] / deg[j] if deg[j] else 1.0 / n
    g = (1 - alpha) * a + alpha / n
    x = np.full(n, 1.0 / n)
    for _ in range(iters):
        y = g @ x
        if np.abs(y - x).sum() < 1e-15:
            return y
        x = y
    return x


@pytest.fixture
def tiny_cmap():
    return CategoryMap.from_dict({
        "Web Search": {"Google": ["google.com"], "Bing": ["bing.com"]},
        "Social Media": {"Facebook": ["facebook.com"]},
        "Email": {"GMail": ["mail.google.com"]},
    })


def make_table(rows):
    return ClickTable.from_records(ClickRecord(*r) for r in rows)


_acceptance: dict[int, tuple[str, bool]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and rep.passed:
        return
    number, text = mark.args
    prev = _acceptance.get(number, (text, True))[1]
    _acceptance[number] = (text, prev and rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        text, passed = _acceptance[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {text}")
