"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion."""

from __future__ import annotations

import pytest

_results: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion covered by this test")


@pytest.fixture
def report(request):
    """Append human-readable measurements to the criterion's summary line."""
    notes: list[str] = []
    request.node.stash[_notes_key] = notes
    return notes.append


_notes_key = pytest.StashKey[list]()


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        number, title = marker.args
        entry = _results.setdefault(number, {"title": title, "passed": True, "notes": []})
        entry["passed"] &= rep.passed
        entry["notes"].extend(item.stash.get(_notes_key, []))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        r = _results[number]
        status = "PASS" if r["passed"] else "FAIL"
        line = f"{status} criterion {number}: {r['title']}"
        if r["notes"]:
            line += " | " + "; ".join(r["notes"])
        terminalreporter.write_line(line)
