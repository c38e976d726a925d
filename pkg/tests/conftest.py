import pytest

_LINES_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES_KEY] = []


@pytest.fixture
def acceptance_line(request):
    """Record one PASS/FAIL line; returns ``ok`` so tests can assert on it."""
    lines = request.config.stash[_LINES_KEY]

    def record(number: int, ok: bool, text: str) -> bool:
        line = f"ACCEPTANCE {number} {'PASS' if ok else 'FAIL'} {text}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
