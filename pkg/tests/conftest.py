from __future__ import annotations

import pytest

from specdigitizer.pipeline import load_schema

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def extraction_schema() -> dict:
    return load_schema("extraction")


@pytest.fixture(scope="session")
def ground_truth_schema() -> dict:
    return load_schema("ground_truth")
