import pytest


def pytest_configure(config):
    config._criteria = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    verdict = "PASS" if rep.passed else "FAIL"
    item.config._criteria.append((mark.args[0], verdict, item.name, detail))


def pytest_terminal_summary(terminalreporter, config):
    if not config._criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num, verdict, name, detail in sorted(config._criteria):
        line = f"criterion {num}: {verdict} {name}"
        terminalreporter.write_line(f"{line} ({detail})" if detail else line)
