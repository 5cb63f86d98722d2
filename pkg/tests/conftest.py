import pytest

_LINES = {}


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line per acceptance criterion; a crash before reporting counts as FAIL."""
    state = {}

    def report(number, title, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {title}" + (f" ({detail})" if detail else "")
        state["key"] = number
        _LINES[number] = line
        print(line)
        return ok

    yield report
    if "key" not in state:
        number = getattr(request.function, "criterion_number", 0)
        _LINES[number] = f"FAIL criterion {number:2d}: {request.function.__name__} raised before reporting"


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(_LINES):
            terminalreporter.write_line(_LINES[key])
