"""Collects one verdict line per acceptance criterion and prints them after the run."""

import contextlib
import time

import pytest

VERDICTS = {}


@pytest.fixture
def criterion():
    @contextlib.contextmanager
    def record(number, title, limit_s=None, offset_s=0.0):
        """``offset_s`` charges setup done in a shared fixture to this criterion."""
        start = time.perf_counter() - offset_s
        notes = []
        try:
            yield notes
        except BaseException as exc:
            VERDICTS[number] = f"FAIL  criterion {number}: {title} ({type(exc).__name__}: {exc})".splitlines()[0]
            raise
        elapsed = time.perf_counter() - start
        detail = "; ".join(notes)
        if limit_s is not None:
            detail = f"{detail}; {elapsed:.1f}s of {limit_s}s" if detail else f"{elapsed:.1f}s of {limit_s}s"
            if elapsed >= limit_s:
                VERDICTS[number] = f"FAIL  criterion {number}: {title} ({detail})"
                pytest.fail(f"criterion {number} took {elapsed:.1f}s, limit {limit_s}s")
        VERDICTS[number] = f"PASS  criterion {number}: {title} ({detail})"

    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[number])
