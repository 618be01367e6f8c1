import contextlib
import time

import pytest

ACCEPTANCE: dict[int, tuple[str, str, float, str]] = {}


@contextlib.contextmanager
def _criterion(number: int, title: str):
    start = time.perf_counter()
    detail: list[str] = []
    try:
        yield detail
    except BaseException as exc:
        ACCEPTANCE[number] = ("FAIL", title, time.perf_counter() - start, str(exc).split("\n")[0])
        raise
    ACCEPTANCE[number] = ("PASS", title, time.perf_counter() - start, "; ".join(detail))


@pytest.fixture
def criterion():
    """Context manager recording one acceptance criterion; append notes to the yielded list."""
    return _criterion


def _line(number: int) -> str:
    status, title, elapsed, note = ACCEPTANCE[number]
    text = f"[{status}] criterion {number:2d}: {title} ({elapsed:.2f} s)"
    return f"{text} -- {note}" if note else text


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(_line(number))
