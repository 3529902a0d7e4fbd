import pytest

# one line per acceptance criterion, printed after the run
_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    def record(number, ok, detail):
        _VERDICTS.append(f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {detail}")
        print(_VERDICTS[-1])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
