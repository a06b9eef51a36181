"""Per-criterion summary for the acceptance suite."""

import pytest

CRITERIA = {
    1: "dual-attention oracle",
    2: "gradient suite",
    3: "kNN oracle",
    4: "self-match identity",
    5: "flow endpoints and oracle integration",
    6: "toy CFM convergence",
    7: "metric identities",
    8: "DSP accuracy",
    9: "end-to-end smoke",
    10: "determinism",
}

_outcomes: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    if report.when == "call" or (report.when == "setup" and not report.passed):
        state = _outcomes.setdefault(n, [0, 0, 0])
        if report.passed:
            state[0] += 1
        elif report.skipped:
            state[2] += 1
        else:
            state[1] += 1


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, name in CRITERIA.items():
        if n not in _outcomes:
            continue
        passed, failed, skipped = _outcomes[n]
        verdict = "FAIL" if failed else ("SKIP" if not passed else "PASS")
        terminalreporter.write_line(f"AC{n:<2} {verdict}  {name}  ({passed} passed, {failed} failed, {skipped} skipped)")
