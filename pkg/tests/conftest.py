import pytest

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")
    config.addinivalue_line("markers", "slow: long-running Monte Carlo test")


@pytest.fixture
def detail(request):
    """Dict a criterion test fills with the numbers behind its verdict."""
    marker = request.node.get_closest_marker("criterion")
    if marker is None:
        return {}
    entry = _criteria.setdefault(marker.args[0], {"title": marker.args[1], "outcome": "not run", "detail": {}})
    return entry["detail"]


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call" and not (rep.when == "setup" and rep.outcome != "passed"):
        return
    entry = _criteria.setdefault(marker.args[0], {"title": marker.args[1], "outcome": "not run", "detail": {}})
    if hasattr(rep, "wasxfail"):
        entry["outcome"] = "FAIL (expected, see decisions ledger)" if rep.skipped else "PASS"
    else:
        entry["outcome"] = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        e = _criteria[n]
        info = ", ".join(f"{k}={v}" for k, v in e["detail"].items())
        terminalreporter.write_line(f"[{n:2d}] {e['outcome']:<6} {e['title']}" + (f"  ({info})" if info else ""))
