"""Collects acceptance verdicts and prints one line per criterion at the end of the run."""

import pytest

VERDICTS = {}


@pytest.fixture
def verdict(request):
    """Call ``verdict(n, passed, detail)`` once per acceptance criterion."""
    number = []

    def record(n, passed, detail):
        number.append(n)
        VERDICTS[n] = (bool(passed), detail)
        return passed

    yield record
    if not number:
        n = getattr(request.function, "criterion", None)
        if n is not None and n not in VERDICTS:
            VERDICTS[n] = (False, "raised before reaching a verdict")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    n = getattr(getattr(item, "function", None), "criterion", None)
    if n is not None and rep.when == "call" and rep.failed and n not in VERDICTS:
        VERDICTS[n] = (False, f"raised {call.excinfo.typename}")


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        passed, detail = VERDICTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
