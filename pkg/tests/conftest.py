import pytest

_LINES = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    number, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    if rep.passed:
        verdict = "PASS"
    elif hasattr(rep, "wasxfail"):
        verdict = "FAIL (known, see decisions ledger)"
    else:
        verdict = "FAIL"
    _LINES[number] = f"AC{number} {verdict}: {title}" + (f" [{detail}]" if detail else "")


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_LINES):
        terminalreporter.write_line(_LINES[number])
