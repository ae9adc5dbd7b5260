import pytest

from reservecert.auction_log import Panel

CRITERIA = {
    1: "worked decision example",
    2: "Bonferroni critical values",
    3: "response-gap threshold",
    4: "engine matches brute-force oracle",
    5: "elimination soundness (Monte Carlo)",
    6: "best-policy retention (Monte Carlo)",
    7: "localization identity and monotone maps",
    8: "segment certificate logic and coverage",
    9: "sample-size calculators",
    10: "determinism across workers and replay speed",
    11: "iPinYou anchors (optional, needs data)",
}

_outcomes = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        prev = _outcomes.get(marker, "PASS")
        if report.outcome == "failed":
            _outcomes[marker] = "FAIL"
        elif report.outcome == "skipped" and prev != "FAIL":
            _outcomes[marker] = "SKIP"
        else:
            _outcomes.setdefault(marker, "PASS")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None:
        report.criterion = m.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        terminalreporter.write_line(f"criterion {n:2d} [{_outcomes[n]}] {CRITERIA.get(n, '')}")


@pytest.fixture
def three_row_panel():
    return Panel.from_columns(
        day=["d1", "d1", "d2"],
        floor=[2, 5, 1], bid=[10, 5, 8], payment=[4, 5, 0], filled=[True, True, False],
    )

