import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_log():
    def record(number, passed, text):
        line = f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'} - {text}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
