import pytest

from hetcore.arch import ArchConfig
from hetcore.workload import load_preset


@pytest.fixture(scope="session")
def arch():
    return ArchConfig()


@pytest.fixture(scope="session")
def sphinx():
    return load_preset("sphinx_tiny")


@pytest.fixture(scope="session")
def karma():
    return load_preset("karmavlm")


# criterion id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE, key=lambda c: (c[0], int(c[1:]))):
        ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"{cid} {'PASS' if ok else 'FAIL'}  {detail}")
