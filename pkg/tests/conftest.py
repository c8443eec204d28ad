from __future__ import annotations

import sys

import pytest

from evextract.corpus import maritime_seeds
from evextract.schema import maritime_schema


@pytest.fixture(scope="session")
def schema():
    return maritime_schema()


@pytest.fixture(scope="session")
def seeds(schema):
    return maritime_seeds(schema)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        status, line = results[n]
        terminalreporter.write_line(f"[{status}] criterion {n}: {line}")
