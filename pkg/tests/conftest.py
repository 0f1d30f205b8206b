import pytest

# acceptance outcomes, filled by tests/test_acceptance.py: {"AC-1": (passed, detail)}
ACCEPTANCE = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    ac = item.get_closest_marker("acceptance")
    if ac is None or rep.when != "call":
        return
    detail = ACCEPTANCE.get(ac.args[0], (None, ""))[1]
    ACCEPTANCE[ac.args[0]] = (rep.passed, detail)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(id): acceptance criterion id")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split("-")[1])):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key}: {'PASS' if passed else 'FAIL'}  {detail}")
