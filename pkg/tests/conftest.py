import pytest

#: (criterion, passed, detail) lines recorded by the acceptance suite
ACCEPTANCE = []


@pytest.fixture
def record_criterion():
    def record(name, passed, detail):
        ACCEPTANCE.append((name, bool(passed), detail))
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
