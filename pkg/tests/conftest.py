import pytest

_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = {}


@pytest.fixture
def record_criterion(request):
    """Store a criterion's verdict so the terminal summary can list every one."""
    table = request.config.stash[_ACCEPTANCE]

    def record(number: int, title: str, passed: bool, detail: str = "") -> bool:
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}: {title}"
        if detail:
            line += f" ({detail})"
        table[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    table = config.stash.get(_ACCEPTANCE, {})
    if not table:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(table):
        terminalreporter.write_line(table[number])
