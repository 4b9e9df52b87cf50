import os

import pytest

# criterion lines recorded by the acceptance suite, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    def emit(number: int, name: str, ok: bool, detail: str):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'} {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return emit


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria")
    config.addinivalue_line("markers", "slow: long-running reproduction checks (set SHARPRMD_SLOW=1)")


def pytest_collection_modifyitems(config, items):
    if os.environ.get("SHARPRMD_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="slow; set SHARPRMD_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
