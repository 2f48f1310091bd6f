import os

import pytest

# Acceptance outcomes collected by tests/test_acceptance.py and printed at
# the end of the run, one line per criterion.
ACCEPTANCE = {}


def record(criterion, passed, detail):
    ACCEPTANCE[criterion] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"ACCEPTANCE {key}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def ine_panel_path():
    path = os.environ.get("MAXENTPOP_INE_PANEL")
    if not path or not os.path.exists(path):
        pytest.skip("INE panel not supplied (set MAXENTPOP_INE_PANEL)")
    return path
