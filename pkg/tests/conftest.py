import pytest

_VERDICTS = []


@pytest.fixture
def criterion():
    """Record an acceptance verdict, print it, then assert it."""

    def record(number, title, ok, detail=""):
        line = f"criterion {number} [{title}]: {'PASS' if ok else 'FAIL'}"
        if detail:
            line += f" ({detail})"
        _VERDICTS.append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
