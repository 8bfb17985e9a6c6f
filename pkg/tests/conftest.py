import numpy as np
import pytest

_CRITERIA = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    cid = mark.args[0]
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        if hasattr(rep, "wasxfail"):
            # strict xfail: the criterion itself is not met
            status = "FAIL (known, marked xfail)" if rep.skipped else "FAIL"
        elif rep.failed and "XPASS" in str(rep.longrepr):
            status = "PASS (xfail marker is stale)"
        else:
            status = "PASS" if rep.passed else "FAIL"
        _CRITERIA[cid] = (status, item.name)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_CRITERIA):
        status, name = _CRITERIA[cid]
        terminalreporter.write_line(f"criterion {cid}: {status} ({name})")
