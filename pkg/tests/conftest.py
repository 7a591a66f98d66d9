"""Shared fixtures. Acceptance checks report one PASS/FAIL line each at the end of the run."""

import contextlib

import pytest

_RESULTS = []


@pytest.fixture
def criterion():
    """``with criterion(n, title) as notes: ...``; append detail strings to ``notes``."""

    @contextlib.contextmanager
    def record(number, title):
        notes = []
        try:
            yield notes
        except BaseException as exc:
            _RESULTS.append((number, "FAIL", title, notes + [f"{type(exc).__name__}: {exc}".splitlines()[0]]))
            raise
        _RESULTS.append((number, "PASS", title, notes))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, title, notes in sorted(_RESULTS):
        detail = f" ({'; '.join(notes)})" if notes else ""
        terminalreporter.write_line(f"{status} criterion {number}: {title}{detail}")
