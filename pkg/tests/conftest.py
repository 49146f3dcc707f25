import asyncio
import inspect

import pytest

from helpers import FakeClock


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.hookimpl(tryfirst=True)
def pytest_pyfunc_call(pyfuncitem):
    # run ``async def`` tests on a fresh event loop
    if inspect.iscoroutinefunction(pyfuncitem.obj):
        kwargs = {name: pyfuncitem.funcargs[name] for name in pyfuncitem._fixtureinfo.argnames}
        asyncio.run(asyncio.wait_for(pyfuncitem.obj(**kwargs), timeout=120))
        return True
    return None


_criteria: dict[str, tuple[int, str]] = {}
_outcomes: dict[int, list[str]] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            _criteria[item.nodeid] = mark.args


def pytest_runtest_logreport(report):
    if report.nodeid not in _criteria:
        return
    number, _ = _criteria[report.nodeid]
    if report.when == "call" or report.failed or report.skipped:
        status = "passed" if report.passed else ("skipped" if report.skipped else "failed")
        _outcomes.setdefault(number, []).append(status)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    titles = {num: title for num, title in _criteria.values()}
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        statuses = _outcomes[number]
        verdict = "PASS" if all(s == "passed" for s in statuses) else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {verdict}  {titles[number]}")


@pytest.fixture
def clock():
    return FakeClock()


@pytest.fixture
def store_path(tmp_path):
    return tmp_path / "responses.jsonl"
