import pytest

_RESULTS = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record ``(label, passed, detail)`` for the acceptance summary printed at the end."""
    log = request.config.stash.setdefault(_RESULTS, [])

    def record(label, passed, detail=""):
        log.append((label, bool(passed), detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(_RESULTS, [])
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed, detail in sorted(log, key=lambda e: int(e[0].split()[0])):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {label}  {detail}")
