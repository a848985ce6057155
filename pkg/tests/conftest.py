import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    n = mark.args[0]
    detail = dict(item.user_properties).get("detail", "")
    ok = rep.passed and not hasattr(rep, "wasxfail")
    if hasattr(rep, "wasxfail") and rep.skipped:
        detail = f"{detail} [known red, see decisions ledger]".strip()
    prev = _RESULTS.get(n)
    _RESULTS[n] = (ok and (prev is None or prev[0]), detail if prev is None else f"{prev[1]}; {detail}")


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        ok, detail = _RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
