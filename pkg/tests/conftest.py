"""Shared test fixtures and the acceptance-verdict summary section."""

from __future__ import annotations

import re
from pathlib import Path

import pytest

FIXTURE_DIR = Path(__file__).resolve().parent.parent / "fixtures" / "toy"


@pytest.fixture(scope="session")
def toy_paths() -> dict[str, str]:
    return {
        "runs_dir": str(FIXTURE_DIR / "runs"),
        "corpus": str(FIXTURE_DIR / "corpus.jsonl"),
        "topics": str(FIXTURE_DIR / "topics.tsv"),
        "gold_qrels": str(FIXTURE_DIR / "gold.qrels"),
    }


# one verdict line per numbered acceptance test, shown after the run so the
# outcome of each headline guarantee is visible without -s
_criterion_lines: dict[int, str] = {}
_CRITERION_TEST = re.compile(r"test_c(\d{2})_")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call":
        return
    match = _CRITERION_TEST.match(item.name)
    if match is None:
        return
    number = int(match.group(1))
    titles = getattr(item.module, "CRITERION_TITLES", {})
    title = titles.get(number, item.name)
    verdict = "PASS" if report.passed else "FAIL"
    _criterion_lines[number] = f"criterion {number:02d} [{title}]: {verdict}"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criterion_lines:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criterion_lines):
        terminalreporter.write_line(_criterion_lines[number])
