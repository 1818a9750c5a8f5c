"""Shared pytest plumbing: one summary line per acceptance criterion."""

import pytest

_VERDICTS: list[tuple[str, str, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(id, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        cid, title = mark.args
        detail = dict(item.user_properties).get("detail", "")
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        _VERDICTS.append((cid, status, title, detail))


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid, status, title, detail in sorted(_VERDICTS, key=lambda v: int(v[0][2:])):
        terminalreporter.write_line(f"{cid} {status} {title}" + (f" | {detail}" if detail else ""))
