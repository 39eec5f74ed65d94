import pytest

_acceptance_results = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call" and item.fspath.basename == "test_acceptance.py":
        doc = (item.function.__doc__ or item.name).strip().splitlines()[0]
        _acceptance_results[item.name] = (doc, rep.passed)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_results:
        return
    terminalreporter.write_line("")
    terminalreporter.write_line("acceptance criteria:")
    for name in sorted(_acceptance_results):
        doc, passed = _acceptance_results[name]
        terminalreporter.write_line(f"  {doc}: {'PASS' if passed else 'FAIL'}")
