import pytest

_criterion_lines = []


def record_criterion(name: str, passed: bool, detail: str) -> None:
    _criterion_lines.append((name, passed, detail))


@pytest.hookimpl
def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criterion_lines:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, passed, detail in _criterion_lines:
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {name}: {status}  [{detail}]")
