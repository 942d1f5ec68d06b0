"""Shared fixtures: an isolated reference cache and the acceptance summary.

The acceptance tests record one PASS/FAIL line each; the terminal-summary
hook prints them at the end of the run so the verdict is visible even when
pytest captures per-test output.
"""
from __future__ import annotations

import os

import pytest

_CRITERION_LINES: list = []


@pytest.fixture(scope="session", autouse=True)
def _isolated_reference_cache(tmp_path_factory):
    """Point benchmark reference caching at a session-temporary directory
    unless the environment already pins one."""
    if os.environ.get("BENCH_CACHE_DIR"):
        yield
        return
    cache = tmp_path_factory.mktemp("refcache")
    os.environ["BENCH_CACHE_DIR"] = str(cache)
    try:
        yield
    finally:
        os.environ.pop("BENCH_CACHE_DIR", None)


@pytest.fixture(scope="session")
def criterion_report():
    """Recorder producing exactly one summary line per acceptance criterion."""

    def record(number: int, label: str, ok: bool, detail: str) -> str:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {label}  [{detail}]"
        _CRITERION_LINES.append((number, line))
        print(line)
        return line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERION_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_CRITERION_LINES):
        terminalreporter.write_line(line)
