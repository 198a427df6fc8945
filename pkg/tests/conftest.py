import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion(request):
    """Records one PASS/FAIL line per acceptance criterion and prints it."""
    def record(number: int, title: str):
        return _Recorder(number, title)
    return record


class _Recorder:
    def __init__(self, number, title):
        self.label = f"criterion {number:>2}: {title}"

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            line = f"PASS {self.label}"
        else:
            line = f"FAIL {self.label} ({exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''})"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return False


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[-1])):
            terminalreporter.write_line(line)
