import re

import pytest

_CRITERIA = {}
_TITLES = {
    1: "LTI H2 ground truth",
    2: "generalized Lyapunov residual",
    3: "truncated series vs simulation",
    4: "endpoint output bound",
    5: "identification exactness",
    6: "Monte Carlo coverage of the PAC bound",
    7: "qualitative reproduction (bound below validation risk)",
    8: "formula regressions",
    9: "determinism of experiment artifacts",
}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = re.search(r"test_criterion_(\d+)", item.name)
    if not m or rep.when not in ("setup", "call"):
        return
    n = int(m.group(1))
    if rep.when == "setup" and rep.passed:
        return
    detail = dict(item.user_properties).get("detail", "")
    _CRITERIA[n] = ("PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, detail = _CRITERIA[n]
        line = f"criterion {n} ({_TITLES.get(n, '')}): {status}"
        if detail:
            line += f" | {detail}"
        terminalreporter.write_line(line)
