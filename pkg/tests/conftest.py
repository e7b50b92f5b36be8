import pytest

_LINES = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_LINES] = {}


@pytest.fixture
def criterion(request):
    """Record one summary line per acceptance criterion: criterion(number, passed, detail)."""
    lines = request.config.stash[_LINES]

    def record(number: int, passed: bool, detail: str):
        lines[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(lines[number])
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
